//! Architecture search over per-module widths, depths, groups and kernels.

pub mod candidate;
pub mod controller;
pub mod search;
pub mod space;

pub use controller::{
    baseline_update, compute_reward, reinforce_loss, Controller, ControllerConfig, RewardComponents, RewardRecord,
    Sample, SampleMode, FGD_FLOOR,
};
pub use candidate::CorpusCandidates;
pub use search::{
    candidate_seed, read_history, search_loop, write_preset, CandidateEvaluator, CandidateTrainer, HistoryRecord,
    SearchConfig, SearchOutcome,
};
pub use space::{ArchitectureConfig, Hyperparameter, ModuleConfig, ModuleKind, SearchSpace, CHOICES};
