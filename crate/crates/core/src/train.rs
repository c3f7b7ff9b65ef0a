//! Gradient-descent training of a [`FastTalker`] on corpus samples.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::SyntheticSample;
use crate::model::{FastTalker, LossValues, LossWeights, Targets};
use crate::numerics::optim::{Adam, AdamConfig};
use crate::numerics::{Gradients, Graph, ParamStore, Tensor};
use crate::rng;
use crate::speech::{lsgan_discriminator_loss, Discriminator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub loss_weights: LossWeights,
    /// Train a least-squares critic alongside the generator.
    pub adversarial: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            optimizer: AdamConfig::default(),
            loss_weights: LossWeights::default(),
            adversarial: false,
        }
    }
}

/// Critic weights and optimizer.
pub struct Critic {
    pub net: Discriminator,
    pub store: ParamStore,
    pub adam: Adam,
}

pub struct Trainer {
    pub model: FastTalker,
    pub adam: Adam,
    pub critic: Option<Critic>,
    pub config: TrainConfig,
    pub seed: u64,
    pub step: u64,
}

/// Mean loss values of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub loss: LossValues,
}

impl Trainer {
    pub fn new(model: FastTalker, config: TrainConfig, seed: u64) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let adam = Adam::new(config.optimizer, &model.store);
        let critic = if config.adversarial {
            let mut store = ParamStore::new();
            let mut r = rng::stream(seed, &format!("{}/critic", rng::streams::INIT));
            let net = Discriminator::new(&mut store, &mut r)?;
            let adam = Adam::new(config.optimizer, &store);
            Some(Critic { net, store, adam })
        } else {
            None
        };
        Ok(Self {
            model,
            adam,
            critic,
            config,
            seed,
            step: 0,
        })
    }

    fn graph(&self, index: usize) -> Graph {
        if self.model.options.dropout > 0.0 {
            let name = format!("{}/{}/{index}", rng::streams::DROPOUT, self.step);
            Graph::new().with_dropout_rng(rng::stream(self.seed, &name))
        } else {
            Graph::new()
        }
    }

    /// One optimizer step on the mean loss over `batch`.
    pub fn train_step(&mut self, batch: &[(&SyntheticSample, &Targets)]) -> Result<LossValues> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let weights = self.config.loss_weights;
        let critic = self.critic.as_ref().map(|c| (&c.net, &c.store));
        let results: Vec<Result<(Gradients, LossValues, Vec<f64>)>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, (sample, targets))| {
                let mut g = self.graph(i);
                let terms = self.model.losses(&mut g, sample, targets, &weights, critic)?;
                g.backward(terms.total)?;
                Ok((g.param_grads(), terms.values(&g), g.value(terms.waveform).data().to_vec()))
            })
            .collect();
        let scale = 1.0 / batch.len() as f64;
        let mut grads = Gradients::default();
        let mut loss = LossValues::default();
        let mut fakes = Vec::with_capacity(batch.len());
        for r in results {
            let (g, v, wave) = r?;
            grads.merge(&g);
            loss.add_scaled(&v, scale);
            fakes.push(wave);
        }
        grads.scale(scale);
        self.adam.step(&mut self.model.store, &grads);
        if let Some(c) = self.critic.as_mut() {
            let mut cg = Gradients::default();
            for ((_, targets), fake) in batch.iter().zip(fakes) {
                let mut g = Graph::new();
                let real = g.constant(targets.waveform.clone());
                let fake = g.constant(Tensor::vector(fake));
                let d_real = c.net.forward(&mut g, &c.store, real)?;
                let d_fake = c.net.forward(&mut g, &c.store, fake)?;
                let l = lsgan_discriminator_loss(&mut g, d_real, d_fake)?;
                g.backward(l)?;
                cg.merge(&g.param_grads());
            }
            cg.scale(scale);
            c.adam.step(&mut c.store, &cg);
        }
        self.step += 1;
        Ok(loss)
    }

    /// Runs `config.epochs` epochs over `samples`, shuffling each epoch from
    /// the data stream. Returns one record per epoch.
    pub fn fit(&mut self, samples: &[SyntheticSample]) -> Result<Vec<EpochRecord>> {
        self.fit_with(samples, |_| {})
    }

    pub fn fit_with(&mut self, samples: &[SyntheticSample], mut on_epoch: impl FnMut(&EpochRecord)) -> Result<Vec<EpochRecord>> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        let targets = samples.iter().map(|s| self.model.targets(s)).collect::<Result<Vec<_>>>()?;
        let mut records = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            let mut r = rng::stream(self.seed, &format!("{}/epoch{epoch}", rng::streams::DATA));
            order.shuffle(&mut r);
            let mut mean = LossValues::default();
            let batches: Vec<&[usize]> = order.chunks(self.config.batch_size).collect();
            for chunk in &batches {
                let batch: Vec<(&SyntheticSample, &Targets)> = chunk.iter().map(|&i| (&samples[i], &targets[i])).collect();
                let v = self.train_step(&batch)?;
                mean.add_scaled(&v, 1.0 / batches.len() as f64);
            }
            let rec = EpochRecord {
                epoch,
                steps: self.step,
                loss: mean,
            };
            on_epoch(&rec);
            records.push(rec);
        }
        Ok(records)
    }

    /// Mean teacher-forced losses over `samples` without updating anything.
    pub fn evaluate(model: &FastTalker, samples: &[SyntheticSample], weights: &LossWeights) -> Result<LossValues> {
        let per: Vec<Result<LossValues>> = samples
            .par_iter()
            .map(|s| {
                let t = model.targets(s)?;
                let mut g = Graph::new();
                Ok(model.losses(&mut g, s, &t, weights, None)?.values(&g))
            })
            .collect();
        let mut mean = LossValues::default();
        for v in per {
            mean.add_scaled(&v?, 1.0 / samples.len() as f64);
        }
        Ok(mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::synth_corpus;
    use crate::model::ModelOptions;
    use crate::nas::ArchitectureConfig;

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let samples = synth_corpus(1, 2, 64).unwrap();
        let run = || {
            let model = FastTalker::new(ArchitectureConfig::tiny(), ModelOptions::default(), 9).unwrap();
            let cfg = TrainConfig {
                epochs: 3,
                batch_size: 2,
                optimizer: AdamConfig { lr: 1e-3, ..Default::default() },
                adversarial: true,
                ..Default::default()
            };
            let mut t = Trainer::new(model, cfg, 9).unwrap();
            let recs = t.fit(&samples).unwrap();
            (recs, t.model.store.named())
        };
        let (a, wa) = run();
        let (b, wb) = run();
        assert_eq!(a, b);
        assert_eq!(wa, wb);
        assert_eq!(a.len(), 3);
        assert!(a[2].loss.total < a[0].loss.total);
    }
}
