//! Text normalization, alignment files and the synthetic corpus.

pub mod alignment;
pub mod corpus;
pub mod phonemes;

pub use alignment::{parse_alignment, serialize_alignment, AlignmentTable, AUDIO_FRAME_RATE};
pub use corpus::{read_corpus, synth_corpus, synth_sample, write_corpus, SyntheticSample, CODEBOOK_SIZE};
pub use phonemes::{phonemize, PhonemeSequence, PhonemeTable, WordSpan};

pub const SAMPLE_RATE: u32 = 16_000;
/// Waveform samples per audio frame.
pub const HOP_LENGTH: usize = 160;
pub const MEL_BINS: usize = 80;
pub const GESTURE_FRAME_RATE: usize = 30;
const AUDIO_FPS: usize = 100;

/// Gesture frames for `m` audio frames: round-half-up of `m · 30/100`.
pub fn gesture_frame_count(audio_frames: usize) -> usize {
    (audio_frames * GESTURE_FRAME_RATE * 2 + AUDIO_FPS) / (2 * AUDIO_FPS)
}

/// Latest audio frame at or before the start of gesture frame `j`.
pub fn gesture_to_audio_frame(j: usize, audio_frames: usize) -> usize {
    (j * AUDIO_FPS / GESTURE_FRAME_RATE).min(audio_frames.saturating_sub(1))
}
