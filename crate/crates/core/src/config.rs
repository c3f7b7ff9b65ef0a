//! Run configuration and corpus splitting.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::SyntheticSample;
use crate::model::ModelOptions;
use crate::nas::{ArchitectureConfig, ControllerConfig, SearchConfig, SearchSpace};
use crate::rng;
use crate::train::TrainConfig;

/// A preset name or an inline architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchSpec {
    Preset(String),
    Inline(ArchitectureConfig),
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec::Preset("small".into())
    }
}

impl ArchSpec {
    pub fn resolve(&self) -> Result<ArchitectureConfig> {
        let arch = match self {
            ArchSpec::Preset(name) => ArchitectureConfig::preset(name)?,
            ArchSpec::Inline(a) => a.clone(),
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Search settings as they appear in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NasSettings {
    pub space: SearchSpace,
    pub budget: usize,
    /// Candidates per controller update (`o`).
    pub batch_size: usize,
    pub gamma: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub calibration_samples: usize,
    pub parallelism: usize,
    pub controller: ControllerConfig,
    /// Fixed-stop training length of every candidate.
    pub candidate_epochs: usize,
}

impl Default for NasSettings {
    fn default() -> Self {
        let s = SearchConfig::default();
        Self {
            space: SearchSpace::default(),
            budget: s.budget,
            batch_size: s.batch_size,
            gamma: s.gamma,
            alpha: s.alpha,
            beta: s.beta,
            calibration_samples: s.calibration_samples,
            parallelism: s.parallelism,
            controller: s.controller,
            candidate_epochs: 30,
        }
    }
}

impl NasSettings {
    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            budget: self.budget,
            batch_size: self.batch_size,
            gamma: self.gamma,
            alpha: self.alpha,
            beta: self.beta,
            calibration_samples: self.calibration_samples,
            parallelism: self.parallelism,
            controller: self.controller,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: PathBuf,
    pub arch: ArchSpec,
    pub model: ModelOptions,
    pub train: TrainConfig,
    pub nas: NasSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: PathBuf::from("corpus.jsonl"),
            arch: ArchSpec::default(),
            model: ModelOptions::default(),
            train: TrainConfig::default(),
            nas: NasSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let arch = self.arch.resolve()?;
        self.nas.space.validate()?;
        if !self.nas.space.search_kernel {
            if arch.modules().iter().any(|m| m.kernel != self.nas.space.fixed_kernel) {
                return Err(Error::Config(format!(
                    "architecture kernels must equal the fixed kernel {} when kernels are not searched",
                    self.nas.space.fixed_kernel
                )));
            }
        }
        self.nas.search_config().validate()?;
        if self.nas.candidate_epochs == 0 {
            return Err(Error::Config("nas.candidate_epochs must be at least 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.train.optimizer.lr > 0.0) {
            return Err(Error::Config("train.optimizer.lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config("model.dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?} (train, val, test)"))),
        }
    }
}

/// Assigns samples to train/val/test in 8:1:1 proportions. Samples are
/// ordered by a hash of their id, so membership does not depend on corpus
/// order; validation and test each receive `⌊n/10⌋` samples.
pub fn split_8_1_1(samples: &[SyntheticSample]) -> [Vec<SyntheticSample>; 3] {
    let mut order: Vec<(u64, &SyntheticSample)> = samples.iter().map(|s| (rng::hash64(&s.id), s)).collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    let tenth = samples.len() / 10;
    let n_train = samples.len() - 2 * tenth;
    let mut out: [Vec<SyntheticSample>; 3] = Default::default();
    for (i, (_, s)) in order.into_iter().enumerate() {
        let k = if i < n_train {
            0
        } else if i < n_train + tenth {
            1
        } else {
            2
        };
        out[k].push(s.clone());
    }
    out
}

pub fn select_split(samples: &[SyntheticSample], split: Split) -> Vec<SyntheticSample> {
    let [train, val, test] = split_8_1_1(samples);
    match split {
        Split::Train => train,
        Split::Val => val,
        Split::Test => test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::synth_corpus;

    #[test]
    fn hundred_samples_split_80_10_10() {
        let samples = synth_corpus(2, 100, 64).unwrap();
        let [a, b, c] = split_8_1_1(&samples);
        assert_eq!((a.len(), b.len(), c.len()), (80, 10, 10));
        let mut reversed = samples.clone();
        reversed.reverse();
        let [a2, _, _] = split_8_1_1(&reversed);
        assert_eq!(a.iter().map(|s| &s.id).collect::<Vec<_>>(), a2.iter().map(|s| &s.id).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"seed": 1}"#).is_ok());
        assert!(RunConfig::from_json(r#"{"seed": 1, "sed": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"nas": {"budget": 3, "gama": 0.5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"optimizer": {"lr": 1e-3, "momentum": 0.9}}}"#).is_err());
    }

    #[test]
    fn arch_accepts_preset_or_inline() {
        let c = RunConfig::from_json(r#"{"arch": "paper-searched"}"#).unwrap();
        assert_eq!(c.arch.resolve().unwrap(), ArchitectureConfig::searched_preset(3));
        let inline = serde_json::to_string(&ArchitectureConfig::tiny()).unwrap();
        let c = RunConfig::from_json(&format!(r#"{{"arch": {inline}}}"#)).unwrap();
        assert_eq!(c.arch.resolve().unwrap(), ArchitectureConfig::tiny());
        assert!(RunConfig::from_json(r#"{"arch": "nonexistent"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"nas": {"gamma": 1.0}}"#).is_err());
    }
}
