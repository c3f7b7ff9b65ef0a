//! Joint text-to-speech and co-speech gesture generation.
//!
//! A causal transformer encodes phonemes; cascaded duration, pitch and energy
//! predictors produce rhythm features that drive both a waveform decoder and,
//! through shared predictors with gated fusion, a gesture latent decoder whose
//! codes are reconstructed by a frozen VQ decoder. Per-module widths and
//! depths are chosen by a REINFORCE-trained LSTM controller ([`nas`]).

pub mod error;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};
pub use numerics::{ConvSpec, Graph, ParamId, ParamStore, Tensor, Var};
pub mod frontend;
pub mod nas;
pub mod speech;
pub mod gesture;
pub mod model;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod train;
