//! Controller-driven search: sample a batch, train and score every
//! candidate, update the policy, repeat.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::controller::{baseline_update, compute_reward, Controller, ControllerConfig, RewardComponents, SampleMode};
use super::space::{ArchitectureConfig, SearchSpace};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Total number of candidates to evaluate.
    pub budget: usize,
    /// Candidates per policy update.
    pub batch_size: usize,
    /// Baseline decay.
    pub gamma: f64,
    /// Reward factors; calibrated from random architectures when absent.
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub calibration_samples: usize,
    /// Worker threads for candidate evaluation; 0 uses every core.
    pub parallelism: usize,
    pub controller: ControllerConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            budget: 64,
            batch_size: 8,
            gamma: 0.9,
            alpha: None,
            beta: None,
            calibration_samples: 16,
            parallelism: 0,
            controller: ControllerConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("search budget must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("search batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if let Some(v) = v {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Config(format!("{name} must be finite and non-negative")));
                }
            }
        }
        if (self.alpha.is_none() || self.beta.is_none()) && self.calibration_samples == 0 {
            return Err(Error::Config("calibration_samples must be positive when alpha or beta is unset".into()));
        }
        Ok(())
    }
}

/// Trains a candidate for a fixed number of epochs.
pub trait CandidateTrainer: Sync {
    type Model: Send;
    /// Returns the trained model and the epochs it ran.
    fn train(&self, config: &ArchitectureConfig, seed: u64) -> Result<(Self::Model, usize)>;
}

/// Scores a trained candidate.
pub trait CandidateEvaluator<M>: Sync {
    fn evaluate(&self, model: &M, config: &ArchitectureConfig, seed: u64) -> Result<RewardComponents>;
}

/// One evaluated candidate, as stored in the history file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryRecord {
    pub index: usize,
    pub update: usize,
    pub config: ArchitectureConfig,
    pub indices: Vec<usize>,
    pub seed: u64,
    pub reward: f64,
    pub components: RewardComponents,
    pub alpha: f64,
    pub beta: f64,
    /// Baseline the candidate's advantage was measured against.
    pub baseline: f64,
    pub epochs: usize,
    pub wall_ms: u64,
}

impl HistoryRecord {
    /// The record with its wall-clock field cleared, for reproducibility
    /// comparisons.
    pub fn without_timing(&self) -> Self {
        Self { wall_ms: 0, ..self.clone() }
    }
}

pub struct SearchOutcome {
    pub best: ArchitectureConfig,
    pub best_reward: f64,
    pub history: Vec<HistoryRecord>,
    pub controller: Controller,
    pub baseline: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Training seed of candidate `index`.
pub fn candidate_seed(master: u64, index: usize) -> u64 {
    rng::stream(master, &format!("{}/candidate{index}", rng::streams::SAMPLING)).gen()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Scored {
    components: RewardComponents,
    epochs: usize,
    wall_ms: u64,
}

fn score<T: CandidateTrainer, E: CandidateEvaluator<T::Model>>(
    trainer: &T,
    evaluator: &E,
    config: &ArchitectureConfig,
    seed: u64,
) -> Result<Scored> {
    let start = Instant::now();
    let (model, epochs) = trainer.train(config, seed)?;
    let components = evaluator.evaluate(&model, config, seed)?;
    Ok(Scored {
        components,
        epochs,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// Reads a history file. A trailing line that does not parse (an
/// interrupted write) is dropped.
pub fn read_history(path: &Path) -> Result<Vec<HistoryRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(f)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => return Err(Error::Config(format!("{}: line {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

fn write_history(path: &Path, records: &[HistoryRecord], append: bool) -> Result<()> {
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    let mut f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

/// Runs the search. When `history_path` names an existing file the run
/// resumes from it: completed batches are replayed into the controller
/// without re-evaluation, an incomplete final batch is discarded and redone.
pub fn search_loop<T, E>(
    space: &SearchSpace,
    cfg: &SearchConfig,
    seed: u64,
    trainer: &T,
    evaluator: &E,
    history_path: Option<&Path>,
) -> Result<SearchOutcome>
where
    T: CandidateTrainer,
    E: CandidateEvaluator<T::Model>,
{
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut controller = Controller::new(space.clone(), cfg.controller, seed)?;
    let mut sampling = rng::stream(seed, rng::streams::SAMPLING);
    let o = cfg.batch_size;
    let batch_len = |update: usize| o.min(cfg.budget.saturating_sub(update * o));

    let previous = match history_path {
        Some(p) if p.exists() => read_history(p)?,
        _ => Vec::new(),
    };

    let (alpha, beta) = if let Some(first) = previous.first() {
        (first.alpha, first.beta)
    } else if let (Some(a), Some(b)) = (cfg.alpha, cfg.beta) {
        (a, b)
    } else {
        let mut r = rng::stream(seed, &format!("{}/calibration", rng::streams::SAMPLING));
        let configs = (0..cfg.calibration_samples)
            .map(|_| controller.sample(SampleMode::Stochastic, &mut r).map(|s| s.config))
            .collect::<Result<Vec<_>>>()?;
        let scored = pool.install(|| {
            configs
                .par_iter()
                .enumerate()
                .map(|(i, c)| score(trainer, evaluator, c, candidate_seed(seed ^ 0x5eed, i)))
                .collect::<Result<Vec<_>>>()
        })?;
        let alpha = cfg
            .alpha
            .unwrap_or_else(|| 5.0 * median(scored.iter().map(|s| s.components.fgd).collect()));
        let beta = cfg
            .beta
            .unwrap_or_else(|| 5.0 * median(scored.iter().map(|s| s.components.params).collect()));
        (alpha, beta)
    };

    let mut history: Vec<HistoryRecord> = Vec::new();
    let mut baseline = 0.0;
    let mut update = 0;
    // Replay completed batches.
    let mut cursor = 0;
    while cursor < previous.len() && update * o < cfg.budget {
        let want = batch_len(update);
        let batch: Vec<&HistoryRecord> = previous[cursor..].iter().take_while(|r| r.update == update).collect();
        if batch.len() < want {
            break;
        }
        let batch = &batch[..want];
        for (k, rec) in batch.iter().enumerate() {
            let s = controller.sample(SampleMode::Stochastic, &mut sampling)?;
            if s.indices != rec.indices || rec.index != update * o + k {
                return Err(Error::Config(format!(
                    "history record {} does not match this seed and search configuration",
                    rec.index
                )));
            }
        }
        let pairs: Vec<(Vec<usize>, f64)> = batch.iter().map(|r| (r.indices.clone(), r.reward)).collect();
        controller.reinforce_update(&pairs, baseline)?;
        let rewards: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        baseline = baseline_update(baseline, &rewards, cfg.gamma)?;
        history.extend(batch.iter().map(|r| (*r).clone()));
        cursor += batch.len();
        update += 1;
    }
    if let Some(p) = history_path {
        if history.len() != previous.len() {
            write_history(p, &history, false)?;
        }
    }

    while update * o < cfg.budget {
        let n = batch_len(update);
        let samples = (0..n)
            .map(|_| controller.sample(SampleMode::Stochastic, &mut sampling))
            .collect::<Result<Vec<_>>>()?;
        let first = update * o;
        let scored = pool.install(|| {
            samples
                .par_iter()
                .enumerate()
                .map(|(k, s)| score(trainer, evaluator, &s.config, candidate_seed(seed, first + k)))
                .collect::<Result<Vec<_>>>()
        })?;
        let mut records = Vec::with_capacity(n);
        for (k, (s, sc)) in samples.into_iter().zip(scored).enumerate() {
            let reward = compute_reward(&sc.components, alpha, beta)?;
            records.push(HistoryRecord {
                index: first + k,
                update,
                config: s.config,
                indices: s.indices,
                seed: candidate_seed(seed, first + k),
                reward,
                components: sc.components,
                alpha,
                beta,
                baseline,
                epochs: sc.epochs,
                wall_ms: sc.wall_ms,
            });
        }
        let pairs: Vec<(Vec<usize>, f64)> = records.iter().map(|r| (r.indices.clone(), r.reward)).collect();
        controller.reinforce_update(&pairs, baseline)?;
        let rewards: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        baseline = baseline_update(baseline, &rewards, cfg.gamma)?;
        if let Some(p) = history_path {
            write_history(p, &records, true)?;
        }
        history.extend(records);
        update += 1;
    }

    let best = history
        .iter()
        .fold(None::<&HistoryRecord>, |acc, r| match acc {
            Some(b) if b.reward >= r.reward => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| Error::Config("search produced no candidates".into()))?;
    Ok(SearchOutcome {
        best: best.config.clone(),
        best_reward: best.reward,
        history,
        controller,
        baseline,
        alpha,
        beta,
    })
}

/// Writes `config` as a pretty-printed JSON preset file.
pub fn write_preset(path: &Path, config: &ArchitectureConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(config)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(PathBuf::from(path), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nas::ModuleKind;

    struct Bandit;

    impl CandidateTrainer for Bandit {
        type Model = ();
        fn train(&self, _: &ArchitectureConfig, _: u64) -> Result<((), usize)> {
            Ok(((), 0))
        }
    }

    impl CandidateEvaluator<()> for Bandit {
        fn evaluate(&self, _: &(), c: &ArchitectureConfig, _: u64) -> Result<RewardComponents> {
            let hit = c.get(ModuleKind::DurationPred).layers == 4;
            Ok(RewardComponents {
                fgd: 1.0,
                utmos_proxy: if hit { 1.0 } else { 0.0 },
                params: 1.0,
            })
        }
    }

    fn cfg(budget: usize, o: usize) -> SearchConfig {
        SearchConfig {
            budget,
            batch_size: o,
            alpha: Some(0.0),
            beta: Some(0.0),
            parallelism: 1,
            ..Default::default()
        }
    }

    #[test]
    fn budget_one_gives_one_record() {
        let out = search_loop(&SearchSpace::default(), &cfg(1, 8), 4, &Bandit, &Bandit, None).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best, out.history[0].config);
    }

    #[test]
    fn zero_budget_is_rejected() {
        assert!(search_loop(&SearchSpace::default(), &cfg(0, 8), 4, &Bandit, &Bandit, None).is_err());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let space = SearchSpace::default();
        let full = search_loop(&space, &cfg(10, 3), 11, &Bandit, &Bandit, None).unwrap();

        let path = dir.path().join("history.jsonl");
        // stop after 5 candidates: the batch of 2 is incomplete for budget 10
        search_loop(&space, &cfg(5, 3), 11, &Bandit, &Bandit, Some(&path)).unwrap();
        let resumed = search_loop(&space, &cfg(10, 3), 11, &Bandit, &Bandit, Some(&path)).unwrap();

        let strip = |h: &[HistoryRecord]| h.iter().map(HistoryRecord::without_timing).collect::<Vec<_>>();
        assert_eq!(strip(&full.history), strip(&resumed.history));
        assert_eq!(strip(&read_history(&path).unwrap()), strip(&full.history));
        assert_eq!(full.controller.store.named(), resumed.controller.store.named());
        assert_eq!(full.controller.adam, resumed.controller.adam);
        assert_eq!(full.baseline.to_bits(), resumed.baseline.to_bits());
    }

    #[test]
    fn calibration_sets_factors_from_medians() {
        let c = SearchConfig {
            budget: 2,
            batch_size: 2,
            alpha: None,
            beta: None,
            calibration_samples: 3,
            parallelism: 1,
            ..Default::default()
        };
        let out = search_loop(&SearchSpace::default(), &c, 1, &Bandit, &Bandit, None).unwrap();
        assert_eq!(out.alpha, 5.0);
        assert_eq!(out.beta, 5.0);
        assert!(out.history.iter().all(|r| r.alpha == 5.0 && r.beta == 5.0));
    }
}
