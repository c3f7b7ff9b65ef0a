//! LSTM policy over architecture decisions and its REINFORCE update.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::space::{ArchitectureConfig, Hyperparameter, SearchSpace, CHOICES};
use crate::error::{Error, Result};
use crate::numerics::layers::{Linear, LstmCell};
use crate::numerics::optim::{Adam, AdamConfig};
use crate::numerics::{Gradients, Graph, ParamId, ParamStore, Tensor, Var};
use crate::rng;

/// Logit offset that removes a choice from the support.
const MASKED: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub hidden: usize,
    pub embedding: usize,
    pub lr: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            embedding: 32,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Stochastic,
    Greedy,
}

/// One decoded architecture with its per-decision log-probabilities and
/// the distributions they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub indices: Vec<usize>,
    pub config: ArchitectureConfig,
    pub log_probs: Vec<f64>,
    pub probs: Vec<[f64; CHOICES]>,
}

/// Two-layer LSTM policy emitting one categorical distribution per decision.
/// Each step is fed the embedding of the previous choice.
#[derive(Debug, Clone)]
pub struct Controller {
    pub space: SearchSpace,
    pub config: ControllerConfig,
    pub store: ParamStore,
    pub adam: Adam,
    embedding: ParamId,
    cells: [LstmCell; 2],
    heads: Vec<Linear>,
}

impl Controller {
    /// Heads start at zero, so the initial policy is uniform at every step.
    pub fn new(space: SearchSpace, config: ControllerConfig, seed: u64) -> Result<Self> {
        space.validate()?;
        if config.hidden == 0 || config.embedding == 0 || !(config.lr > 0.0) {
            return Err(Error::Config("controller hidden, embedding and lr must be positive".into()));
        }
        let mut r = rng::stream(seed, &format!("{}/controller", rng::streams::INIT));
        let mut store = ParamStore::new();
        let rows = 1 + space.active().len() * CHOICES;
        let embedding = store.uniform("controller.embedding", &[rows, config.embedding], 1, &mut r);
        let cells = [
            LstmCell::new(&mut store, "controller.lstm0", config.embedding, config.hidden, &mut r),
            LstmCell::new(&mut store, "controller.lstm1", config.hidden, config.hidden, &mut r),
        ];
        let mut heads = Vec::with_capacity(space.decisions());
        for t in 0..space.decisions() {
            let head = Linear::new(&mut store, &format!("controller.head{t}"), config.hidden, CHOICES, &mut r);
            head.zero(&mut store);
            heads.push(head);
        }
        let adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                ..Default::default()
            },
            &store,
        );
        Ok(Self {
            space,
            config,
            store,
            adam,
            embedding,
            cells,
            heads,
        })
    }

    pub fn decisions(&self) -> usize {
        self.heads.len()
    }

    /// Overwrites step `t`'s head so that it emits `logits` regardless of
    /// the hidden state.
    pub fn force_logits(&mut self, t: usize, logits: [f64; CHOICES]) -> Result<()> {
        let head = self
            .heads
            .get(t)
            .ok_or_else(|| Error::InvalidArgument(format!("decision {t} out of range")))?;
        head.zero(&mut self.store);
        self.store.get_mut(head.bias).data_mut().copy_from_slice(&logits);
        Ok(())
    }

    fn embedding_row(&self, t: usize, prev: Option<usize>) -> usize {
        let per = self.space.active().len();
        match prev {
            None => 0,
            Some(choice) => 1 + ((t - 1) % per) * CHOICES + choice,
        }
    }

    /// Additive logit mask for step `t` given the choices made so far.
    fn mask(&self, t: usize, chosen: &[usize]) -> [f64; CHOICES] {
        let active = self.space.active();
        let per = active.len();
        let mut m = [0.0; CHOICES];
        if active[t % per] == Hyperparameter::Groups {
            let start = (t / per) * per;
            let ch_pos = active.iter().position(|&h| h == Hyperparameter::Channels).unwrap();
            let channels = self.space.channels[chosen[start + ch_pos]];
            for (j, &g) in self.space.groups.iter().enumerate() {
                if channels % g != 0 {
                    m[j] = MASKED;
                }
            }
        }
        m
    }

    /// Runs the policy, choosing each step with `choose(t, probs)`. Returns
    /// the chosen indices, the log-probability vars and the step
    /// distributions.
    fn rollout(
        &self,
        g: &mut Graph,
        mut choose: impl FnMut(usize, &[f64; CHOICES]) -> usize,
    ) -> Result<(Vec<usize>, Vec<Var>, Vec<[f64; CHOICES]>)> {
        let hd = self.config.hidden;
        let table = g.param(&self.store, self.embedding);
        let zero = || Tensor::zeros(&[1, hd]);
        let (mut h0, mut c0) = (g.constant(zero()), g.constant(zero()));
        let (mut h1, mut c1) = (g.constant(zero()), g.constant(zero()));
        let t_len = self.decisions();
        let mut chosen = Vec::with_capacity(t_len);
        let mut log_probs = Vec::with_capacity(t_len);
        let mut dists = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let row = self.embedding_row(t, chosen.last().copied());
            let x = g.gather_rows(table, &[Some(row)])?;
            (h0, c0) = self.cells[0].step(g, &self.store, x, h0, c0)?;
            (h1, c1) = self.cells[1].step(g, &self.store, h0, h1, c1)?;
            let mut logits = self.heads[t].forward(g, &self.store, h1)?;
            let mask = self.mask(t, &chosen);
            if mask.iter().any(|&v| v != 0.0) {
                let m = g.constant(Tensor::new(vec![1, CHOICES], mask.to_vec())?);
                logits = g.add(logits, m)?;
            }
            let lp = g.log_softmax_rows(logits)?;
            let mut p = [0.0; CHOICES];
            for (pj, lj) in p.iter_mut().zip(g.value(lp).data()) {
                *pj = lj.exp();
            }
            let c = choose(t, &p);
            if c >= CHOICES {
                return Err(Error::InvalidArgument(format!("choice {c} out of range")));
            }
            log_probs.push(g.pick(lp, &[c])?);
            chosen.push(c);
            dists.push(p);
        }
        Ok((chosen, log_probs, dists))
    }

    /// Step distributions along a fixed decision sequence.
    pub fn distributions(&self, indices: &[usize]) -> Result<Vec<[f64; CHOICES]>> {
        self.check_len(indices)?;
        let mut g = Graph::new();
        Ok(self.rollout(&mut g, |t, _| indices[t])?.2)
    }

    fn check_len(&self, indices: &[usize]) -> Result<()> {
        if indices.len() != self.decisions() {
            return Err(Error::InvalidArgument(format!(
                "expected {} decisions, got {}",
                self.decisions(),
                indices.len()
            )));
        }
        Ok(())
    }

    /// Draws one architecture. Stochastic mode samples every step from
    /// `rng`; greedy mode takes the most probable choice (lowest index on
    /// ties). Samples the space rejects are redrawn.
    pub fn sample(&self, mode: SampleMode, rng: &mut ChaCha8Rng) -> Result<Sample> {
        const ATTEMPTS: usize = 64;
        for _ in 0..ATTEMPTS {
            let mut g = Graph::new();
            let (indices, lps, probs) = self.rollout(&mut g, |_, p| match mode {
                SampleMode::Greedy => argmax(p),
                SampleMode::Stochastic => categorical(p, rng.gen::<f64>()),
            })?;
            if let Ok(config) = self.space.decode(&indices) {
                let log_probs = lps.iter().map(|&v| g.value(v).data()[0]).collect();
                return Ok(Sample {
                    indices,
                    config,
                    log_probs,
                    probs,
                });
            }
            if mode == SampleMode::Greedy {
                break;
            }
        }
        Err(Error::Architecture("controller produced no valid architecture".into()))
    }

    /// Gradient of the REINFORCE surrogate loss
    /// `−(1/o) Σ_k (R_k − b) Σ_t log P(h_t | h_<t)` for a batch of decision
    /// sequences with their rewards.
    pub fn reinforce_gradients(&self, batch: &[(Vec<usize>, f64)], baseline: f64) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty REINFORCE batch".into()));
        }
        let mut g = Graph::new();
        let mut seqs = Vec::with_capacity(batch.len());
        let mut rewards = Vec::with_capacity(batch.len());
        for (indices, reward) in batch {
            self.check_len(indices)?;
            let (_, lps, _) = self.rollout(&mut g, |t, _| indices[t])?;
            seqs.push(g.add_n(&lps)?);
            rewards.push(*reward);
        }
        let loss = reinforce_loss(&mut g, &seqs, &rewards, baseline)?;
        g.backward(loss)?;
        Ok(g.param_grads())
    }

    /// One Adam step along the policy gradient. Returns the gradient used.
    pub fn reinforce_update(&mut self, batch: &[(Vec<usize>, f64)], baseline: f64) -> Result<Gradients> {
        let grads = self.reinforce_gradients(batch, baseline)?;
        self.adam.step(&mut self.store, &grads);
        Ok(grads)
    }
}

/// Surrogate loss whose gradient is the negated score-function estimate:
/// `−(1/o) Σ_k (R_k − b) · log_prob_k`.
pub fn reinforce_loss(g: &mut Graph, log_probs: &[Var], rewards: &[f64], baseline: f64) -> Result<Var> {
    if log_probs.is_empty() || log_probs.len() != rewards.len() {
        return Err(Error::InvalidArgument(format!(
            "{} log-probabilities for {} rewards",
            log_probs.len(),
            rewards.len()
        )));
    }
    let o = rewards.len() as f64;
    let terms = log_probs
        .iter()
        .zip(rewards)
        .map(|(&lp, &r)| g.scale(lp, -(r - baseline) / o))
        .collect::<Result<Vec<_>>>()?;
    g.add_n(&terms)
}

fn argmax(p: &[f64; CHOICES]) -> usize {
    let mut best = 0;
    for j in 1..CHOICES {
        if p[j] > p[best] {
            best = j;
        }
    }
    best
}

fn categorical(p: &[f64; CHOICES], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &pj) in p.iter().enumerate() {
        acc += pj;
        if u < acc {
            return j;
        }
    }
    // Rounding left `u` above the cumulative sum: take the last supported choice.
    p.iter().rposition(|&v| v > 0.0).unwrap_or(CHOICES - 1)
}

/// Metric components that enter the reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardComponents {
    pub fgd: f64,
    pub utmos_proxy: f64,
    pub params: f64,
}

/// Smallest FGD used in the reward, so a perfect match stays finite.
pub const FGD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub reward: f64,
    pub components: RewardComponents,
    pub alpha: f64,
    pub beta: f64,
    pub baseline: f64,
    pub batch_size: usize,
}

/// `R = α / max(FGD, 1e-6) + UTMOS + β / params`.
pub fn compute_reward(c: &RewardComponents, alpha: f64, beta: f64) -> Result<f64> {
    if !(c.fgd >= 0.0) || !(c.params > 0.0) || !c.utmos_proxy.is_finite() || !c.fgd.is_finite() || !c.params.is_finite() {
        return Err(Error::InvalidArgument(format!("reward components out of domain: {c:?}")));
    }
    if !(alpha >= 0.0) || !(beta >= 0.0) || !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("reward factors must be finite and non-negative: α={alpha}, β={beta}")));
    }
    let r = alpha / c.fgd.max(FGD_FLOOR) + c.utmos_proxy + beta / c.params;
    if !r.is_finite() {
        return Err(Error::NonFinite("compute_reward"));
    }
    Ok(r)
}

/// Exponential moving average `b' = γ·b + (1 − γ)·mean(R)`.
pub fn baseline_update(b: f64, rewards: &[f64], gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("baseline decay must lie in [0, 1), got {gamma}")));
    }
    if rewards.is_empty() {
        return Err(Error::InvalidArgument("empty reward batch".into()));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(gamma * b + (1.0 - gamma) * mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nas::ModuleKind;

    fn controller() -> Controller {
        Controller::new(SearchSpace::default(), ControllerConfig::default(), 3).unwrap()
    }

    #[test]
    fn fresh_policy_is_uniform_where_unmasked() {
        let c = controller();
        let mut r = rng::stream(1, "t");
        let s = c.sample(SampleMode::Stochastic, &mut r).unwrap();
        assert_eq!(s.indices.len(), 28);
        assert_eq!(s.log_probs.len(), 28);
        for (t, p) in s.probs.iter().enumerate() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if t % 4 != 2 {
                assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-12), "step {t}: {p:?}");
            }
        }
    }

    #[test]
    fn invalid_groups_are_masked() {
        let mut c = Controller::new(
            SearchSpace {
                channels: vec![2, 4, 6, 10],
                ..Default::default()
            },
            ControllerConfig::default(),
            1,
        )
        .unwrap();
        // force channels = 6 everywhere; groups 4 and 8 must vanish
        for m in 0..7 {
            c.force_logits(m * 4, [0.0, 0.0, 50.0, 0.0]).unwrap();
        }
        let mut r = rng::stream(2, "t");
        for _ in 0..20 {
            let s = c.sample(SampleMode::Stochastic, &mut r).unwrap();
            for m in 0..7 {
                let p = s.probs[m * 4 + 2];
                if s.indices[m * 4] == 2 {
                    assert!(p[2] < 1e-300 && p[3] < 1e-300);
                    assert!((p[0] - 0.5).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forced_greedy_decode_gives_searched_preset() {
        let mut c = controller();
        let space = c.space.clone();
        let target = ArchitectureConfig::searched_preset(3);
        let idx = space.encode(&target).unwrap();
        for (t, &i) in idx.iter().enumerate() {
            let mut l = [0.0; 4];
            l[i] = 10.0;
            c.force_logits(t, l).unwrap();
        }
        let s = c.sample(SampleMode::Greedy, &mut rng::stream(0, "t")).unwrap();
        assert_eq!(s.config, target);
        assert_eq!(s.config.get(ModuleKind::SemanticTranslator).layers, 0);
    }

    #[test]
    fn stochastic_sampling_is_seeded() {
        let c = controller();
        let a = c.sample(SampleMode::Stochastic, &mut rng::stream(5, "s")).unwrap();
        let b = c.sample(SampleMode::Stochastic, &mut rng::stream(5, "s")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn centered_rewards_leave_policy_unchanged() {
        let mut c = controller();
        let before = c.store.named();
        let s = c.sample(SampleMode::Stochastic, &mut rng::stream(5, "s")).unwrap();
        let grads = c.reinforce_update(&[(s.indices.clone(), 2.5), (s.indices, 2.5)], 2.5).unwrap();
        assert_eq!(grads.l2_norm(), 0.0);
        assert_eq!(c.store.named(), before);
    }

    #[test]
    fn gradient_is_linear_in_advantage() {
        let c = controller();
        let s = c.sample(SampleMode::Stochastic, &mut rng::stream(8, "s")).unwrap();
        let g1 = c.reinforce_gradients(&[(s.indices.clone(), 1.5)], 0.5).unwrap();
        let g2 = c.reinforce_gradients(&[(s.indices, 2.5)], 0.5).unwrap();
        for (id, a) in g1.iter() {
            let b = g2.get(id).unwrap();
            for (x, y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn reward_substitution() {
        let c = RewardComponents {
            fgd: 2.0,
            utmos_proxy: 3.0,
            params: 1e6,
        };
        assert_eq!(compute_reward(&c, 10.0, 1e6).unwrap(), 9.0);
        assert_eq!(compute_reward(&c, 0.0, 0.0).unwrap(), 3.0);
        let zero = RewardComponents { fgd: 0.0, ..c };
        assert_eq!(compute_reward(&zero, 1.0, 0.0).unwrap(), 1e6 + 3.0);
        assert!(compute_reward(&RewardComponents { params: 0.0, ..c }, 1.0, 1.0).is_err());
    }

    #[test]
    fn baseline_examples() {
        assert!((baseline_update(0.0, &[1.0], 0.9).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(baseline_update(7.0, &[1.0, 3.0], 0.0).unwrap(), 2.0);
        assert!(baseline_update(0.0, &[1.0], 1.0).is_err());
        assert!(baseline_update(0.0, &[1.0], -0.1).is_err());
        let mut b = 0.0;
        for _ in 0..2000 {
            b = baseline_update(b, &[4.0, 4.0], 0.9).unwrap();
        }
        assert!((b - 4.0).abs() < 1e-12);
    }
}
