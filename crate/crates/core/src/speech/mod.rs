//! Phoneme encoder, cascaded rhythm predictors, decoders and audio losses.

pub mod cwt;
pub mod features;
pub mod loss;
pub mod modules;
pub mod wav;

pub use cwt::{cwt, icwt, CwtConfig};
pub use features::{frame_energy, log_durations, pitch_spectrogram, ENERGY_WINDOW};
pub use loss::{lsgan_discriminator_loss, lsgan_generator_loss, multi_resolution_stft_loss, Discriminator, StftLossConfig};
pub use modules::{durations_from_log, length_regulate, MelDecoder, PhonemeEncoder, RhythmPredictor, WaveformDecoder};
pub use wav::{wav_bytes, write_wav, write_wav_file};
