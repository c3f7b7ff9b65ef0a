use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::layers::Conv1d;
use crate::numerics::{ConvSpec, Graph, ParamStore, Var};

/// Floor applied to magnitudes before the log-magnitude term.
pub const MAGNITUDE_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftLossConfig {
    /// FFT sizes; each uses a hop of half its size.
    pub fft_sizes: Vec<usize>,
}

impl Default for StftLossConfig {
    fn default() -> Self {
        Self {
            fft_sizes: vec![512, 1024, 2048],
        }
    }
}

/// Spectral convergence and log-magnitude terms at one resolution.
#[derive(Debug, Clone, Copy)]
pub struct StftTerms {
    pub spectral_convergence: Var,
    pub log_magnitude: Var,
}

/// `‖|S_gt| − |S_pred|‖_F / ‖|S_gt|‖_F` and the mean absolute difference of
/// floored log magnitudes.
pub fn stft_terms(g: &mut Graph, pred: Var, target: Var, n_fft: usize) -> Result<StftTerms> {
    if g.value(pred).len() != g.value(target).len() {
        return Err(Error::shape_in(
            "stft_loss",
            format!("waveform lengths {} vs {}", g.value(pred).len(), g.value(target).len()),
        ));
    }
    let hop = (n_fft / 2).max(1);
    let mp = g.stft_magnitude(pred, n_fft, hop)?;
    let mt = g.stft_magnitude(target, n_fft, hop)?;
    let diff = g.sub(mt, mp)?;
    let num = g.l2_norm(diff)?;
    let den = g.value(mt).data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let spectral_convergence = g.scale(num, 1.0 / den.max(MAGNITUDE_FLOOR))?;
    let lp = g.ln_clamped(mp, MAGNITUDE_FLOOR)?;
    let lt = g.ln_clamped(mt, MAGNITUDE_FLOOR)?;
    let log_magnitude = g.l1_mean(lt, lp)?;
    Ok(StftTerms {
        spectral_convergence,
        log_magnitude,
    })
}

/// Sum over resolutions of both STFT terms.
pub fn multi_resolution_stft_loss(g: &mut Graph, pred: Var, target: Var, cfg: &StftLossConfig) -> Result<Var> {
    let mut parts = Vec::new();
    for &n in &cfg.fft_sizes {
        let t = stft_terms(g, pred, target, n)?;
        parts.push(t.spectral_convergence);
        parts.push(t.log_magnitude);
    }
    if parts.is_empty() {
        return Err(Error::InvalidArgument("no STFT resolutions configured".into()));
    }
    g.add_n(&parts)
}

/// Least-squares discriminator objective: `mean((D(real) − 1)²) + mean(D(fake)²)`.
pub fn lsgan_discriminator_loss(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    let r = g.add_scalar(d_real, -1.0)?;
    let r = g.square(r)?;
    let r = g.mean(r)?;
    let f = g.square(d_fake)?;
    let f = g.mean(f)?;
    g.add(r, f)
}

/// Least-squares generator objective: `mean((D(fake) − 1)²)`.
pub fn lsgan_generator_loss(g: &mut Graph, d_fake: Var) -> Result<Var> {
    let f = g.add_scalar(d_fake, -1.0)?;
    let f = g.square(f)?;
    g.mean(f)
}

/// Waveform critic: four convolutions, the first three followed by leaky
/// ReLU and a stride-4 decimation.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub layers: Vec<Conv1d>,
}

impl Discriminator {
    const WIDTHS: [usize; 5] = [1, 16, 32, 32, 1];
    const STRIDE: usize = 4;
    const SLOPE: f64 = 0.2;

    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let layers = (0..4)
            .map(|i| {
                let kernel = if i == 3 { 3 } else { 9 };
                let spec = ConvSpec::new(Self::WIDTHS[i], Self::WIDTHS[i + 1], kernel);
                Conv1d::new(store, &format!("disc.{i}"), spec, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Scores `[1 × T']` for a waveform of any shape (read flat).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, wave: Var) -> Result<Var> {
        self.run(g, store, wave, true)
    }

    /// Like [`Discriminator::forward`] but with the weights entered as
    /// constants, for use inside a graph whose parameters come from another
    /// store.
    pub fn forward_detached(&self, g: &mut Graph, store: &ParamStore, wave: Var) -> Result<Var> {
        self.run(g, store, wave, false)
    }

    fn run(&self, g: &mut Graph, store: &ParamStore, wave: Var, trainable: bool) -> Result<Var> {
        let n = g.value(wave).len();
        let mut h = g.reshape(wave, &[1, n])?;
        for (i, layer) in self.layers.iter().enumerate() {
            h = if trainable {
                layer.forward(g, store, h)?
            } else {
                let w = g.constant(store.get(layer.weight).clone());
                let b = g.constant(store.get(layer.bias).clone());
                g.conv1d(h, w, b, layer.spec)?
            };
            if i < 3 {
                h = g.leaky_relu(h, Self::SLOPE)?;
                let t_len = g.shape(h)[1];
                let keep: Vec<Option<usize>> = (0..t_len).step_by(Self::STRIDE).map(Some).collect();
                let ht = g.transpose(h)?;
                let ht = g.gather_rows(ht, &keep)?;
                h = g.transpose(ht)?;
            }
        }
        Ok(h)
    }
}
