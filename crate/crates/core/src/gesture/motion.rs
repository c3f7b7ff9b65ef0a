use rand::Rng;
use sha2::{Digest, Sha256};

use super::codebook::{Codebook, FROZEN_SEED, LATENT_DIM};
use crate::error::Result;
use crate::numerics::conv::conv1d_forward;
use crate::numerics::{ConvSpec, Tensor};
use crate::rng;

/// Rotation-space pose width: 16 joints × 3 axis-angle components.
pub const POSE_DIM: usize = 48;
const HIDDEN: usize = 64;

/// Frozen two-layer causal convolution from codebook rows to poses. It is
/// evaluated with plain kernels, outside any autodiff graph, so nothing can
/// train it.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionDecoder {
    first: (ConvSpec, Vec<f64>, Vec<f64>),
    second: (ConvSpec, Vec<f64>, Vec<f64>),
}

fn layer(spec: ConvSpec, r: &mut rand_chacha::ChaCha8Rng) -> (ConvSpec, Vec<f64>, Vec<f64>) {
    let k = 1.0 / (spec.fan_in() as f64).sqrt();
    let [a, b, c] = spec.weight_shape();
    let w = (0..a * b * c).map(|_| r.gen_range(-k..k)).collect();
    let bias = (0..spec.out_channels).map(|_| r.gen_range(-k..k)).collect();
    (spec, w, bias)
}

impl MotionDecoder {
    pub fn generate(seed: u64) -> Self {
        let mut r = rng::stream(seed, &format!("{}/motion_decoder", rng::streams::FROZEN));
        Self {
            first: layer(ConvSpec::new(LATENT_DIM, HIDDEN, 3), &mut r),
            second: layer(ConvSpec::new(HIDDEN, POSE_DIM, 3), &mut r),
        }
    }

    pub fn frozen() -> Self {
        Self::generate(FROZEN_SEED)
    }

    /// Poses `[T × 48]` from codebook rows `[T × 256]`.
    pub fn decode_latents(&self, latents: &Tensor) -> Result<Tensor> {
        let x = latents.transpose2();
        let (s1, w1, b1) = &self.first;
        let mut h = conv1d_forward(s1, x.data(), x.shape(), w1, b1)?;
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let t = latents.rows();
        let (s2, w2, b2) = &self.second;
        let y = conv1d_forward(s2, &h, &[HIDDEN, t], w2, b2)?;
        Ok(Tensor::new(vec![POSE_DIM, t], y)?.transpose2())
    }

    pub fn reconstruct(&self, indices: &[usize], codebook: &Codebook) -> Result<Tensor> {
        self.decode_latents(&codebook.dequantize(indices)?)
    }

    /// SHA-256 of all weights, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (_, w, b) in [&self.first, &self.second] {
            for v in w.iter().chain(b) {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
