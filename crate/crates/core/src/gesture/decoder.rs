use rand_chacha::ChaCha8Rng;

use super::codebook::LATENT_DIM;
use crate::error::{Error, Result};
use crate::frontend::CODEBOOK_SIZE;
use crate::nas::ModuleConfig;
use crate::numerics::layers::{LayerNorm, Linear, TransformerBlock};
use crate::numerics::{Graph, ParamStore, Var};
use crate::speech::modules::TransformerStack;

/// Maps fused rhythm and semantic features to codebook logits and a
/// continuous latent. With zero layers it is one linear map.
#[derive(Debug, Clone)]
pub struct GestureLatentDecoder {
    pub input: Option<Linear>,
    pub stack: Option<TransformerStack>,
    pub heads: Linear,
}

impl GestureLatentDecoder {
    pub const OUT_DIM: usize = CODEBOOK_SIZE + LATENT_DIM;

    pub fn new(store: &mut ParamStore, in_dim: usize, cfg: &ModuleConfig, dropout: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.layers == 0 {
            return Ok(Self {
                input: None,
                stack: None,
                heads: Linear::new(store, "gesture.heads", in_dim, Self::OUT_DIM, rng),
            });
        }
        let c = cfg.channels;
        Ok(Self {
            input: Some(Linear::new(store, "gesture.input", in_dim, c, rng)),
            stack: Some(TransformerStack::new(store, "gesture", c, cfg, dropout, rng)?),
            heads: Linear::new(store, "gesture.heads", c, Self::OUT_DIM, rng),
        })
    }

    pub fn param_count(in_dim: usize, cfg: &ModuleConfig) -> usize {
        if cfg.layers == 0 {
            return Linear::param_count(in_dim, Self::OUT_DIM);
        }
        let c = cfg.channels;
        Linear::param_count(in_dim, c)
            + cfg.layers * TransformerBlock::param_count(c, cfg.kernel, cfg.groups)
            + LayerNorm::param_count(c)
            + Linear::param_count(c, Self::OUT_DIM)
    }

    /// `(logits [T × 256], latent [T × 256])`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<(Var, Var)> {
        if g.shape(features).len() != 2 {
            return Err(Error::shape_in("gesture decoder", "features must be [T × C]".to_string()));
        }
        let mut h = features;
        if let (Some(input), Some(stack)) = (&self.input, &self.stack) {
            h = input.forward(g, store, h)?;
            h = stack.forward(g, store, h)?;
        }
        let out = self.heads.forward(g, store, h)?;
        let logits = g.slice_cols(out, 0, CODEBOOK_SIZE)?;
        let latent = g.slice_cols(out, CODEBOOK_SIZE, LATENT_DIM)?;
        Ok((logits, latent))
    }
}

/// Cross-entropy and latent L1 (mean) terms.
#[derive(Debug, Clone, Copy)]
pub struct GestureLossTerms {
    pub cross_entropy: Var,
    pub latent_l1: Var,
    pub total: Var,
}

pub fn gesture_loss(g: &mut Graph, logits: Var, latent: Var, indices: &[usize], latent_gt: Var) -> Result<GestureLossTerms> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= CODEBOOK_SIZE) {
        return Err(Error::InvalidArgument(format!("codebook index {bad} >= {CODEBOOK_SIZE}")));
    }
    let cross_entropy = g.cross_entropy(logits, indices)?;
    let latent_l1 = g.l1_mean(latent_gt, latent)?;
    let total = g.add(cross_entropy, latent_l1)?;
    Ok(GestureLossTerms {
        cross_entropy,
        latent_l1,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn loss_closed_forms() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[3, 256]));
        let l = g.constant(Tensor::zeros(&[3, 256]));
        let t = gesture_loss(&mut g, logits, l, &[0, 7, 255], l).unwrap();
        assert!((g.value(t.total).data()[0] - 256f64.ln()).abs() < 1e-12);

        let mut onehot = Tensor::zeros(&[2, 256]);
        onehot.data_mut()[3] = 50.0;
        onehot.data_mut()[256 + 9] = 50.0;
        let logits = g.constant(onehot);
        let l = g.constant(Tensor::full(&[2, 256], 0.25));
        let t = gesture_loss(&mut g, logits, l, &[3, 9], l).unwrap();
        assert!(g.value(t.total).data()[0] < 1e-9);

        let shifted = g.constant(Tensor::full(&[2, 256], 0.75));
        let t = gesture_loss(&mut g, logits, shifted, &[3, 9], l).unwrap();
        assert!((g.value(t.latent_l1).data()[0] - 0.5).abs() < 1e-15);

        assert!(gesture_loss(&mut g, logits, l, &[3, 256], l).is_err());
    }
}
