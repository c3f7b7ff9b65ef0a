//! Tensor storage, reverse-mode autodiff and the layer primitives the model
//! is built from.

pub mod conv;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod serialize;
pub mod spectral;
mod tensor;

pub use conv::{ConvSpec, TransposedConvSpec};
pub use graph::{Graph, Var};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
