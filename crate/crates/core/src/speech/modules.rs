use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frontend::{HOP_LENGTH, MEL_BINS};
use crate::nas::ModuleConfig;
use crate::numerics::layers::{positional_encoding, Conv1d, ConvTranspose1d, LayerNorm, Linear, TransformerBlock};
use crate::numerics::{ConvSpec, Graph, ParamId, ParamStore, TransposedConvSpec, Var};

/// Hidden width of the mel decoder.
pub const MEL_HIDDEN: usize = 128;
/// Upper bound on a predicted phoneme duration, in frames.
pub const MAX_PHONEME_FRAMES: usize = 400;

/// Either a single linear map (zero layers) or a stack of causal
/// transformer blocks followed by a layer norm.
#[derive(Debug, Clone)]
pub enum TransformerStack {
    Linear(Linear),
    Blocks { blocks: Vec<TransformerBlock>, norm: LayerNorm },
}

impl TransformerStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        cfg: &ModuleConfig,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if cfg.layers == 0 {
            return Ok(Self::Linear(Linear::new(store, &format!("{name}.linear"), dim, dim, rng)));
        }
        let blocks = (0..cfg.layers)
            .map(|i| TransformerBlock::new(store, &format!("{name}.block{i}"), dim, cfg.kernel, cfg.groups, dropout, rng))
            .collect::<Result<_>>()?;
        Ok(Self::Blocks {
            blocks,
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        match self {
            Self::Linear(l) => l.forward(g, store, x),
            Self::Blocks { blocks, norm } => {
                let mut h = x;
                for b in blocks {
                    h = b.forward(g, store, h)?;
                }
                norm.forward(g, store, h)
            }
        }
    }
}

/// Token embedding plus sinusoidal positions, then a causal transformer stack.
#[derive(Debug, Clone)]
pub struct PhonemeEncoder {
    pub embedding: ParamId,
    pub stack: TransformerStack,
    pub vocab: usize,
    pub dim: usize,
}

impl PhonemeEncoder {
    pub fn new(store: &mut ParamStore, vocab: usize, cfg: &ModuleConfig, dropout: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let dim = cfg.channels;
        Ok(Self {
            embedding: store.uniform("encoder.embedding", &[vocab, dim], dim, rng),
            stack: TransformerStack::new(store, "encoder", dim, cfg, dropout, rng)?,
            vocab,
            dim,
        })
    }

    /// `[n × dim]` phoneme features.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty phoneme sequence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab) {
            return Err(Error::InvalidArgument(format!("token {bad} outside vocabulary of {}", self.vocab)));
        }
        let table = g.param(store, self.embedding);
        let idx: Vec<Option<usize>> = tokens.iter().map(|&t| Some(t)).collect();
        let e = g.gather_rows(table, &idx)?;
        let pos = g.constant(positional_encoding(tokens.len(), self.dim));
        let x = g.add(e, pos)?;
        self.stack.forward(g, store, x)
    }
}

/// Rhythm predictor: a residual stack of causal convolutions producing a
/// latent of the model width, and a linear head on that latent.
#[derive(Debug, Clone)]
pub struct RhythmPredictor {
    pub input: Option<Linear>,
    pub convs: Vec<(Conv1d, LayerNorm)>,
    pub output: Linear,
    pub head: Linear,
    pub dropout: f64,
}

impl RhythmPredictor {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        head_dim: usize,
        cfg: &ModuleConfig,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let c = cfg.channels;
        let (input, convs, output) = if cfg.layers == 0 {
            (None, Vec::new(), Linear::new(store, &format!("{name}.linear"), dim, dim, rng))
        } else {
            let input = Linear::new(store, &format!("{name}.input"), dim, c, rng);
            let convs = (0..cfg.layers)
                .map(|i| {
                    let spec = ConvSpec::new(c, c, cfg.kernel).groups(cfg.groups);
                    Ok((
                        Conv1d::new(store, &format!("{name}.conv{i}"), spec, rng)?,
                        LayerNorm::new(store, &format!("{name}.norm{i}"), c),
                    ))
                })
                .collect::<Result<_>>()?;
            (Some(input), convs, Linear::new(store, &format!("{name}.output"), c, dim, rng))
        };
        Ok(Self {
            input,
            convs,
            output,
            head: Linear::new(store, &format!("{name}.head"), dim, head_dim, rng),
            dropout,
        })
    }

    /// Predictor latent `[T × dim]`.
    pub fn latent(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let Some(input) = &self.input else {
            return self.output.forward(g, store, x);
        };
        let mut h = input.forward(g, store, x)?;
        for (conv, norm) in &self.convs {
            let y = conv.forward_tc(g, store, h)?;
            let y = g.relu(y)?;
            let y = g.dropout(y, self.dropout)?;
            let s = g.add(h, y)?;
            h = norm.forward(g, store, s)?;
        }
        self.output.forward(g, store, h)
    }

    pub fn predict(&self, g: &mut Graph, store: &ParamStore, latent: Var) -> Result<Var> {
        self.head.forward(g, store, latent)
    }
}

/// Repeats row `i` of `f` `durations[i]` times.
pub fn length_regulate(g: &mut Graph, f: Var, durations: &[usize]) -> Result<Var> {
    let rows = g.value(f).rows();
    if durations.len() != rows {
        return Err(Error::shape_in(
            "length_regulate",
            format!("{} durations for {rows} rows", durations.len()),
        ));
    }
    if durations.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument("durations must be at least 1".into()));
    }
    let idx: Vec<Option<usize>> = durations
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat_n(Some(i), d))
        .collect();
    g.gather_rows(f, &idx)
}

/// Frame counts from log-duration predictions: `max(1, round(exp(d)))`,
/// capped at [`MAX_PHONEME_FRAMES`].
pub fn durations_from_log(log_d: &[f64]) -> Vec<usize> {
    log_d
        .iter()
        .map(|v| {
            let r = v.min((MAX_PHONEME_FRAMES as f64).ln() + 1.0).exp().round();
            (r as usize).clamp(1, MAX_PHONEME_FRAMES)
        })
        .collect()
}

/// Two causal convolutions mapping `[m × 3·dim]` rhythm features to `[m × 80]`.
#[derive(Debug, Clone)]
pub struct MelDecoder {
    pub hidden: Conv1d,
    pub output: Conv1d,
}

impl MelDecoder {
    pub fn new(store: &mut ParamStore, in_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            hidden: Conv1d::new(store, "mel.hidden", ConvSpec::new(in_dim, MEL_HIDDEN, 3), rng)?,
            output: Conv1d::new(store, "mel.output", ConvSpec::new(MEL_HIDDEN, MEL_BINS, 1), rng)?,
        })
    }

    pub fn param_count(in_dim: usize) -> usize {
        ConvSpec::new(in_dim, MEL_HIDDEN, 3).param_count() + ConvSpec::new(MEL_HIDDEN, MEL_BINS, 1).param_count()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, f_r: Var) -> Result<Var> {
        let h = self.hidden.forward_tc(g, store, f_r)?;
        let h = g.relu(h)?;
        self.output.forward_tc(g, store, h)
    }
}

#[derive(Debug, Clone)]
pub struct GatedBlock {
    pub dilated: Conv1d,
    pub project: Conv1d,
}

/// Gated dilated residual stack, then a transposed convolution that turns
/// each frame into [`HOP_LENGTH`] samples.
#[derive(Debug, Clone)]
pub struct WaveformDecoder {
    pub input: Option<Conv1d>,
    pub blocks: Vec<GatedBlock>,
    pub upsample: ConvTranspose1d,
    pub channels: usize,
}

impl WaveformDecoder {
    /// Dilation of block `i`.
    pub fn dilation(i: usize) -> usize {
        1 << (i % 4)
    }

    pub fn new(store: &mut ParamStore, in_dim: usize, cfg: &ModuleConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let c = cfg.channels;
        if cfg.layers == 0 {
            let spec = TransposedConvSpec::new(in_dim, 1, HOP_LENGTH, HOP_LENGTH);
            return Ok(Self {
                input: None,
                blocks: Vec::new(),
                upsample: ConvTranspose1d::new(store, "wave.upsample", spec, rng)?,
                channels: in_dim,
            });
        }
        let input = Conv1d::new(store, "wave.input", ConvSpec::new(in_dim, c, 1), rng)?;
        let blocks = (0..cfg.layers)
            .map(|i| {
                let dil = ConvSpec::new(c, 2 * c, cfg.kernel).groups(cfg.groups).dilation(Self::dilation(i));
                let proj = ConvSpec::new(c, c, 1).groups(cfg.groups);
                Ok(GatedBlock {
                    dilated: Conv1d::new(store, &format!("wave.block{i}.dilated"), dil, rng)?,
                    project: Conv1d::new(store, &format!("wave.block{i}.project"), proj, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        let spec = TransposedConvSpec::new(c, 1, HOP_LENGTH, HOP_LENGTH);
        Ok(Self {
            input: Some(input),
            blocks,
            upsample: ConvTranspose1d::new(store, "wave.upsample", spec, rng)?,
            channels: c,
        })
    }

    /// `[m × in_dim]` → waveform `[m · 160]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, f_r: Var) -> Result<Var> {
        let mut h = match &self.input {
            Some(conv) => conv.forward_tc(g, store, f_r)?,
            None => f_r,
        };
        let c = self.channels;
        for block in &self.blocks {
            let z = block.dilated.forward_tc(g, store, h)?;
            let a = g.slice_cols(z, 0, c)?;
            let b = g.slice_cols(z, c, c)?;
            let a = g.tanh(a)?;
            let b = g.sigmoid(b)?;
            let gated = g.mul(a, b)?;
            let y = block.project.forward_tc(g, store, gated)?;
            h = g.add(h, y)?;
        }
        let hc = g.transpose(h)?;
        let wave = self.upsample.forward(g, store, hc)?;
        let n = g.value(wave).len();
        g.reshape(wave, &[n])
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::numerics::Tensor;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn regulate_repeats_rows() {
        let mut g = Graph::new();
        let f = g.leaf(Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]));
        let r = length_regulate(&mut g, f, &[2, 1, 3]).unwrap();
        assert_eq!(g.value(r).data(), &[1.0, 1.0, 2.0, 3.0, 3.0, 3.0]);
        let s = g.sum(r).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(f).unwrap(), &[2.0, 1.0, 3.0]);
        assert!(length_regulate(&mut g, f, &[1, 0, 1]).is_err());
        assert!(length_regulate(&mut g, f, &[1, 1]).is_err());
    }

    #[test]
    fn inference_durations_round_and_clamp() {
        assert_eq!(durations_from_log(&[0.0, 2f64.ln(), -5.0, 1.2]), vec![1, 2, 1, 3]);
        assert_eq!(durations_from_log(&[1e6]), vec![MAX_PHONEME_FRAMES]);
    }

    #[test]
    fn encoder_single_phoneme_shape() {
        let mut store = ParamStore::new();
        let enc = PhonemeEncoder::new(&mut store, 64, &ModuleConfig::new(8, 2, 2, 3), 0.0, &mut rng()).unwrap();
        let mut g = Graph::new();
        let out = enc.forward(&mut g, &store, &[5]).unwrap();
        assert_eq!(g.shape(out), &[1, 8]);
        assert!(enc.forward(&mut g, &store, &[64]).is_err());
    }

    #[test]
    fn mel_and_waveform_shapes() {
        let mut store = ParamStore::new();
        let mel = MelDecoder::new(&mut store, 12, &mut rng()).unwrap();
        let wave = WaveformDecoder::new(&mut store, 12, &ModuleConfig::new(8, 2, 2, 3), &mut rng()).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[10, 12], 0.1));
        let s = mel.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(s), &[10, 80]);
        let x2 = g.constant(Tensor::full(&[2, 12], 0.1));
        let a = wave.forward(&mut g, &store, x2).unwrap();
        assert_eq!(g.shape(a), &[320]);
    }

    #[test]
    fn zero_final_layer_gives_silence() {
        let mut store = ParamStore::new();
        let wave = WaveformDecoder::new(&mut store, 6, &ModuleConfig::new(8, 2, 1, 3), &mut rng()).unwrap();
        wave.upsample.zero(&mut store);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 6]));
        let a = wave.forward(&mut g, &store, x).unwrap();
        assert!(g.value(a).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predictor_zero_layers_is_linear() {
        let mut store = ParamStore::new();
        let p = RhythmPredictor::new(&mut store, "p", 4, 1, &ModuleConfig::new(32, 0, 8, 3), 0.0, &mut rng()).unwrap();
        assert!(p.input.is_none() && p.convs.is_empty());
        assert_eq!(store.scalar_count(), Linear::param_count(4, 4) + Linear::param_count(4, 1));
    }
}
