//! Gesture half of the model: rhythm fusion with the shared predictors,
//! word semantics, latent decoding and the frozen VQ reconstruction path.

pub mod codebook;
pub mod decoder;
pub mod motion;
pub mod rhythm;
pub mod semantic;

pub use codebook::{BodyPart, Codebook, FROZEN_SEED, LATENT_DIM};
pub use decoder::{gesture_loss, GestureLatentDecoder, GestureLossTerms};
pub use motion::{MotionDecoder, POSE_DIM};
pub use rhythm::{audio_to_gesture_frames, FusionGate, GateMode, RhythmTranslation, RhythmTranslator, SpeechRhythm};
pub use semantic::{embed_words, expand_to_frames, gesture_frame_words, SemanticTranslator, WORD_EMBEDDING_DIM};
