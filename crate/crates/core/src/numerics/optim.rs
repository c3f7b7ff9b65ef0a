use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are indexed like the store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Descent step on `grads`. Parameters without a gradient keep their
    /// moments but are still updated from them.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            let g = grads.get(id);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }

    /// Ascent step: `step` on the negated gradient.
    pub fn ascend(&mut self, store: &mut ParamStore, grads: &Gradients) {
        let mut neg = grads.clone();
        neg.scale(-1.0);
        self.step(store, &neg);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_fresh_params_unchanged() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::vector(vec![0.5, -0.25]));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let mut g = Gradients::default();
        g.insert(id, vec![0.0, 0.0]);
        adam.step(&mut store, &g);
        assert_eq!(store.get(id).data(), &[0.5, -0.25]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::vector(vec![1.0]));
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &store);
        let mut g = Gradients::default();
        g.insert(id, vec![3.0]);
        adam.step(&mut store, &g);
        assert!((store.get(id).data()[0] - 0.9).abs() < 1e-6);
    }
}
