//! Candidate training and scoring on a corpus, for use with
//! [`search_loop`](super::search_loop).

use super::controller::RewardComponents;
use super::search::{CandidateEvaluator, CandidateTrainer};
use super::space::ArchitectureConfig;
use crate::error::Result;
use crate::frontend::SyntheticSample;
use crate::metrics::evaluate_quality;
use crate::model::{FastTalker, ModelOptions};
use crate::train::{TrainConfig, Trainer};

/// Trains each candidate from scratch for a fixed number of epochs and
/// scores it on a held-out split.
pub struct CorpusCandidates {
    pub train: Vec<SyntheticSample>,
    pub validation: Vec<SyntheticSample>,
    pub options: ModelOptions,
    /// `epochs` is the fixed-stop budget applied to every candidate.
    pub train_config: TrainConfig,
}

impl CandidateTrainer for CorpusCandidates {
    type Model = FastTalker;

    fn train(&self, config: &ArchitectureConfig, seed: u64) -> Result<(FastTalker, usize)> {
        let model = FastTalker::new(config.clone(), self.options.clone(), seed)?;
        let mut trainer = Trainer::new(model, self.train_config.clone(), seed)?;
        let records = trainer.fit(&self.train)?;
        Ok((trainer.model, records.len()))
    }
}

impl CandidateEvaluator<FastTalker> for CorpusCandidates {
    fn evaluate(&self, model: &FastTalker, _: &ArchitectureConfig, _: u64) -> Result<RewardComponents> {
        let report = evaluate_quality(model, &self.validation)?;
        Ok(RewardComponents {
            fgd: report.fgd,
            utmos_proxy: report.utmos_proxy,
            params: report.params,
        })
    }
}
