use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frontend::{gesture_to_audio_frame, PhonemeSequence};
use crate::nas::ModuleConfig;
use crate::numerics::layers::{Conv1d, Linear};
use crate::numerics::{ConvSpec, Graph, ParamStore, Tensor, Var};
use crate::rng::hash64;

pub const WORD_EMBEDDING_DIM: usize = 300;

/// Deterministic 300-dim vector for `word`, uniform in (−1, 1) and seeded
/// by a hash of the lowercased word.
pub fn word_embedding(word: &str) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(hash64(&format!("word:{}", word.to_lowercase())));
    (0..WORD_EMBEDDING_DIM).map(|_| r.gen_range(-1.0..1.0)).collect()
}

/// `[k × 300]` table for a word list.
pub fn embed_words(words: &[String]) -> Result<Tensor> {
    if words.is_empty() {
        return Err(Error::InvalidArgument("no words to embed".into()));
    }
    let data = words.iter().flat_map(|w| word_embedding(w)).collect();
    Tensor::new(vec![words.len(), WORD_EMBEDDING_DIM], data)
}

/// Word embedding projected by a linear map, followed (when `layers > 0`)
/// by residual causal convolutions over the word sequence.
#[derive(Debug, Clone)]
pub struct SemanticTranslator {
    pub input: Linear,
    pub convs: Vec<Conv1d>,
    pub channels: usize,
}

impl SemanticTranslator {
    pub fn new(store: &mut ParamStore, cfg: &ModuleConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let c = cfg.channels;
        let input = Linear::new(store, "semantic.input", WORD_EMBEDDING_DIM, c, rng);
        let convs = (0..cfg.layers)
            .map(|i| {
                let spec = ConvSpec::new(c, c, cfg.kernel).groups(cfg.groups);
                Conv1d::new(store, &format!("semantic.conv{i}"), spec, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { input, convs, channels: c })
    }

    /// Per-word features `[k × channels]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, embeddings: Var) -> Result<Var> {
        let mut h = self.input.forward(g, store, embeddings)?;
        if self.convs.is_empty() {
            return Ok(h);
        }
        h = g.relu(h)?;
        for conv in &self.convs {
            let y = conv.forward_tc(g, store, h)?;
            let y = g.relu(y)?;
            h = g.add(h, y)?;
        }
        Ok(h)
    }
}

/// Word index of every gesture frame, following each frame's audio frame
/// back to its phoneme.
pub fn gesture_frame_words(seq: &PhonemeSequence, durations: &[usize], gesture_frames: usize) -> Vec<Option<usize>> {
    let token_words = seq.token_words();
    let mut audio_word = Vec::new();
    for (i, &d) in durations.iter().enumerate() {
        audio_word.extend(std::iter::repeat_n(token_words.get(i).copied(), d));
    }
    let m = audio_word.len();
    (0..gesture_frames)
        .map(|j| audio_word.get(gesture_to_audio_frame(j, m)).copied().flatten())
        .collect()
}

/// Word index of every frame from explicit `[start, end)` frame spans.
/// Frames covered by no span get `None`; later spans win on overlap.
pub fn frame_words_from_spans(spans: &[(usize, usize)], frames: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; frames];
    for (w, &(start, end)) in spans.iter().enumerate() {
        for slot in out.iter_mut().take(end.min(frames)).skip(start) {
            *slot = Some(w);
        }
    }
    out
}

/// Expands per-word features to frames; unaligned frames are zero rows.
pub fn expand_to_frames(g: &mut Graph, word_features: Var, frame_words: &[Option<usize>]) -> Result<Var> {
    g.gather_rows(word_features, frame_words)
}
