//! Deterministic synthetic corpus with known ground truth.
//!
//! Every phoneme id owns a fixed duration, base pitch, energy level, spectral
//! tilt and gesture code drawn from seeded tables, so a model with enough
//! capacity can recover all targets exactly up to the small per-frame noise.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::alignment::{AlignmentTable, AUDIO_FRAME_RATE};
use super::phonemes::{phonemize, PhonemeSequence, WordSpan};
use super::{gesture_frame_count, gesture_to_audio_frame, HOP_LENGTH, MEL_BINS, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::numerics::serialize::TensorJson;
use crate::numerics::Tensor;
use crate::rng;

pub const MAX_VOCAB: usize = 128;
pub const CODEBOOK_SIZE: usize = 256;

/// Per-phoneme generator tables.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusTables {
    pub duration: Vec<usize>,
    pub pitch_hz: Vec<f64>,
    pub energy: Vec<f64>,
    pub tilt: Vec<f64>,
    pub gesture_code: Vec<usize>,
}

impl CorpusTables {
    pub fn generate(seed: u64, vocab_size: usize) -> Self {
        let mut r = rng::stream(seed, "data/tables");
        let mut t = Self {
            duration: Vec::with_capacity(vocab_size),
            pitch_hz: Vec::with_capacity(vocab_size),
            energy: Vec::with_capacity(vocab_size),
            tilt: Vec::with_capacity(vocab_size),
            gesture_code: Vec::with_capacity(vocab_size),
        };
        for _ in 0..vocab_size {
            t.duration.push(r.gen_range(1..=8));
            t.pitch_hz.push(r.gen_range(90.0..220.0));
            t.energy.push(r.gen_range(0.2..1.0));
            t.tilt.push(r.gen_range(-1.0..1.0));
            t.gesture_code.push(r.gen_range(0..CODEBOOK_SIZE));
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub id: String,
    pub text: String,
    pub phonemes: PhonemeSequence,
    pub alignment: AlignmentTable,
    /// F0 in Hz per audio frame.
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    /// `[80 × m]`.
    pub mel: Tensor,
    pub waveform: Vec<f64>,
    /// Codebook index per gesture frame.
    pub gesture_codes: Vec<usize>,
}

impl SyntheticSample {
    pub fn frames(&self) -> usize {
        self.alignment.total_frames()
    }

    pub fn check(&self) -> Result<()> {
        let m = self.frames();
        if self.pitch.len() != m || self.energy.len() != m || self.mel.shape() != [MEL_BINS, m] {
            return Err(Error::InvalidArgument(format!("sample {}: track lengths differ from m={m}", self.id)));
        }
        if self.waveform.len() != m * HOP_LENGTH {
            return Err(Error::InvalidArgument(format!("sample {}: waveform length", self.id)));
        }
        if self.gesture_codes.len() != gesture_frame_count(m) || self.gesture_codes.iter().any(|&c| c >= CODEBOOK_SIZE) {
            return Err(Error::InvalidArgument(format!("sample {}: gesture codes", self.id)));
        }
        Ok(())
    }
}

fn random_text(r: &mut ChaCha8Rng, letters: &[char], vocab_size: usize) -> (String, PhonemeSequence) {
    loop {
        let n_words = r.gen_range(2..=4);
        let words: Vec<String> = (0..n_words)
            .map(|_| {
                let len = r.gen_range(1..=4);
                (0..len).map(|_| *letters.choose(r).unwrap()).collect()
            })
            .collect();
        let text = words.join(" ");
        if let Ok(seq) = phonemize(&text) {
            if seq.tokens.iter().all(|&t| t < vocab_size) {
                return (text, seq);
            }
        }
    }
}

/// Generates `n_samples` samples. The same `(seed, n_samples, vocab_size)`
/// always yields bit-identical output.
pub fn synth_corpus(seed: u64, n_samples: usize, vocab_size: usize) -> Result<Vec<SyntheticSample>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    if vocab_size == 0 || vocab_size > MAX_VOCAB {
        return Err(Error::InvalidArgument(format!("vocab_size must be in 1..={MAX_VOCAB}, got {vocab_size}")));
    }
    let table = super::PhonemeTable::builtin();
    let tables = CorpusTables::generate(seed, vocab_size.max(table.len()));
    let letters: Vec<char> = ('a'..='z')
        .filter(|c| table.rule(&c.to_string()).is_some_and(|ids| ids.iter().all(|&i| i < vocab_size)))
        .collect();
    let mut r = rng::stream(seed, rng::streams::DATA);
    (0..n_samples)
        .map(|i| {
            let (text, seq) = random_text(&mut r, &letters, vocab_size);
            sample_from_sequence(format!("sample-{i:05}"), text, seq, &tables, &mut r)
        })
        .collect()
}

/// One sample for a given text, drawn from the same generator tables as
/// [`synth_corpus`] with `seed`.
pub fn synth_sample(seed: u64, id: &str, text: &str, vocab_size: usize) -> Result<SyntheticSample> {
    if vocab_size == 0 || vocab_size > MAX_VOCAB {
        return Err(Error::InvalidArgument(format!("vocab_size must be in 1..={MAX_VOCAB}, got {vocab_size}")));
    }
    let seq = phonemize(text)?;
    seq.validate(vocab_size)?;
    let tables = CorpusTables::generate(seed, vocab_size.max(super::PhonemeTable::builtin().len()));
    let mut r = rng::stream(seed, &format!("{}/sample/{id}", rng::streams::DATA));
    sample_from_sequence(id.to_string(), text.to_string(), seq, &tables, &mut r)
}

fn sample_from_sequence(
    id: String,
    text: String,
    phonemes: PhonemeSequence,
    tables: &CorpusTables,
    r: &mut ChaCha8Rng,
) -> Result<SyntheticSample> {
    let durations: Vec<usize> = phonemes.tokens.iter().map(|&t| tables.duration[t]).collect();
    let alignment = AlignmentTable::new(durations, AUDIO_FRAME_RATE)?;
    let m = alignment.total_frames();
    let frame_phone: Vec<usize> = phonemes
        .tokens
        .iter()
        .zip(&alignment.durations)
        .flat_map(|(&t, &d)| std::iter::repeat_n(t, d))
        .collect();
    let pitch: Vec<f64> = frame_phone.iter().map(|&t| tables.pitch_hz[t] + r.gen_range(-0.5..0.5)).collect();
    let energy: Vec<f64> = frame_phone.iter().map(|&t| tables.energy[t] + r.gen_range(-0.01..0.01)).collect();
    let mut mel = vec![0.0; MEL_BINS * m];
    for (t, &ph) in frame_phone.iter().enumerate() {
        let centre = 10.0 + (pitch[t] - 90.0) / 130.0 * 50.0;
        for b in 0..MEL_BINS {
            let bump = energy[t] * (-(b as f64 - centre).powi(2) / 72.0).exp();
            let tilt = 0.1 * tables.tilt[ph] * b as f64 / MEL_BINS as f64;
            mel[b * m + t] = bump + tilt + r.gen_range(-0.005..0.005);
        }
    }
    let mut waveform = Vec::with_capacity(m * HOP_LENGTH);
    let mut phase = 0.0f64;
    for n in 0..m * HOP_LENGTH {
        let t = n / HOP_LENGTH;
        phase += 2.0 * PI * pitch[t] / SAMPLE_RATE as f64;
        let s = phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin();
        waveform.push(0.3 * energy[t] * s / 1.75);
    }
    let gesture_codes = (0..gesture_frame_count(m))
        .map(|j| tables.gesture_code[frame_phone[gesture_to_audio_frame(j, m)]])
        .collect();
    let sample = SyntheticSample {
        id,
        text,
        phonemes,
        alignment,
        pitch,
        energy,
        mel: Tensor::new(vec![MEL_BINS, m], mel)?,
        waveform,
        gesture_codes,
    };
    sample.check()?;
    Ok(sample)
}

/// One JSONL line of a corpus file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    pub tokens: Vec<usize>,
    pub words: Vec<WordRecord>,
    pub durations: Vec<usize>,
    pub frame_rate: f64,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    pub mel: TensorJson,
    pub waveform: TensorJson,
    pub gesture_codes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordRecord {
    pub word: String,
    pub start: usize,
    pub end: usize,
}

impl From<&SyntheticSample> for CorpusRecord {
    fn from(s: &SyntheticSample) -> Self {
        Self {
            id: s.id.clone(),
            text: s.text.clone(),
            tokens: s.phonemes.tokens.clone(),
            words: s
                .phonemes
                .words
                .iter()
                .map(|w| WordRecord {
                    word: w.word.clone(),
                    start: w.tokens.start,
                    end: w.tokens.end,
                })
                .collect(),
            durations: s.alignment.durations.clone(),
            frame_rate: s.alignment.frame_rate,
            pitch: s.pitch.clone(),
            energy: s.energy.clone(),
            mel: TensorJson::from(&s.mel),
            waveform: TensorJson::from(&Tensor::vector(s.waveform.clone())),
            gesture_codes: s.gesture_codes.clone(),
        }
    }
}

impl TryFrom<CorpusRecord> for SyntheticSample {
    type Error = Error;

    fn try_from(r: CorpusRecord) -> Result<Self> {
        let phonemes = PhonemeSequence {
            tokens: r.tokens,
            words: r
                .words
                .into_iter()
                .map(|w| WordSpan {
                    word: w.word,
                    tokens: w.start..w.end,
                })
                .collect(),
        };
        phonemes.validate(MAX_VOCAB)?;
        let s = SyntheticSample {
            id: r.id,
            text: r.text,
            phonemes,
            alignment: AlignmentTable::new(r.durations, r.frame_rate)?,
            pitch: r.pitch,
            energy: r.energy,
            mel: Tensor::try_from(&r.mel)?,
            waveform: Tensor::try_from(&r.waveform)?.into_data(),
            gesture_codes: r.gesture_codes,
        };
        s.check()?;
        Ok(s)
    }
}

pub fn write_corpus(path: &Path, samples: &[SyntheticSample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, &CorpusRecord::from(s))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<SyntheticSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|line| {
            let line = line.map_err(|e| Error::io(path, e))?;
            SyntheticSample::try_from(serde_json::from_str::<CorpusRecord>(&line)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    #[test]
    fn same_seed_is_byte_identical() {
        let a = synth_corpus(7, 3, 64).unwrap();
        let b = synth_corpus(7, 3, 64).unwrap();
        let enc = |c: &[SyntheticSample]| -> Vec<String> {
            c.iter().map(|s| serde_json::to_string(&CorpusRecord::from(s)).unwrap()).collect()
        };
        assert_eq!(enc(&a), enc(&b));
        assert_ne!(enc(&a), enc(&synth_corpus(8, 3, 64).unwrap()));
    }

    #[test]
    fn tracks_share_length() {
        for s in synth_corpus(1, 10, 64).unwrap() {
            let m = s.frames();
            assert_eq!(m, s.pitch.len());
            assert_eq!(m, s.energy.len());
            assert_eq!(s.mel.shape(), &[80, m]);
            assert_eq!(s.waveform.len(), m * 160);
            assert!(s.alignment.durations.iter().all(|&d| (1..=8).contains(&d)));
        }
    }

    #[test]
    fn small_vocab_has_distinct_codes() {
        for vocab in [4, 8, 64] {
            let corpus = synth_corpus(3, 8, vocab).unwrap();
            let tables = CorpusTables::generate(3, 64);
            let expected: BTreeSet<usize> = (0..vocab).map(|t| tables.gesture_code[t]).collect();
            let seen: BTreeSet<usize> = corpus.iter().flat_map(|s| s.gesture_codes.iter().copied()).collect();
            assert!(seen.is_subset(&expected));
            assert!(seen.len() >= 2, "vocab {vocab}: {seen:?}");
            assert!(corpus.iter().all(|s| s.phonemes.tokens.iter().all(|&t| t < vocab)));
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(synth_corpus(0, 0, 64).is_err());
        assert!(synth_corpus(0, 1, 129).is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let corpus = synth_corpus(5, 2, 64).unwrap();
        write_corpus(&path, &corpus).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), corpus);
    }
}
