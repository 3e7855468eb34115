//! Scheme registry, the two off-policy learners and the collect/update/evaluate loop.

mod diversity;
pub mod matd3;
pub mod qmix;

pub use diversity::{apply_diversity, DiversityStep};
pub use matd3::Matd3Learner;
pub use qmix::QmixLearner;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{ActionSpace, Env, EnvError, EnvSpec, Environment, JointAction, Observation};
use crate::harness::config::{ConfigError, MaskingSection, RunConfig};
use crate::harness::flops::flops_fc;
use crate::masking::{self, Granularity, MaskMode, MaskSet, MaskingError, SparsityStats};
use crate::networks::{AgentNets, MaskSpec, Mlp, Sharing};
use crate::params::ParamStore;
use crate::replay::{ReplayBuffer, ReplayError, Transition};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Masking(#[from] MaskingError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("non-finite {what} at step {step} (seed {seed}, {updates} updates so far)")]
    NonFinite {
        what: String,
        step: u64,
        seed: u64,
        updates: u64,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainerKind {
    Matd3,
    Qmix,
}

impl fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainerKind::Matd3 => "matd3",
            TrainerKind::Qmix => "qmix",
        })
    }
}

impl FromStr for TrainerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "matd3" => Ok(TrainerKind::Matd3),
            "qmix" => Ok(TrainerKind::Qmix),
            other => Err(format!("unknown trainer {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Nops,
    Fups,
    FupsId,
    Kaleidoscope,
    KaleidoFixedMask,
    KaleidoNeuronMask,
    KaleidoNoReg,
    KaleidoNoReset,
    KaleidoNoCe,
}

impl Scheme {
    pub const ALL: [Scheme; 9] = [
        Scheme::Nops,
        Scheme::Fups,
        Scheme::FupsId,
        Scheme::Kaleidoscope,
        Scheme::KaleidoFixedMask,
        Scheme::KaleidoNeuronMask,
        Scheme::KaleidoNoReg,
        Scheme::KaleidoNoReset,
        Scheme::KaleidoNoCe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Nops => "nops",
            Scheme::Fups => "fups",
            Scheme::FupsId => "fups_id",
            Scheme::Kaleidoscope => "kaleidoscope",
            Scheme::KaleidoFixedMask => "kaleido_fixed_mask",
            Scheme::KaleidoNeuronMask => "kaleido_neuron_mask",
            Scheme::KaleidoNoReg => "kaleido_no_reg",
            Scheme::KaleidoNoReset => "kaleido_no_reset",
            Scheme::KaleidoNoCe => "kaleido_no_ce",
        }
    }

    pub fn sharing(self) -> Sharing {
        match self {
            Scheme::Nops => Sharing::None,
            Scheme::Fups => Sharing::Full,
            Scheme::FupsId => Sharing::FullWithId,
            _ => Sharing::Masked,
        }
    }

    /// Mask options for a shared network with `members` owners.
    pub fn mask_spec(self, members: usize, m: &MaskingSection) -> MaskSpec {
        match self {
            Scheme::Nops | Scheme::Fups | Scheme::FupsId => MaskSpec::None,
            Scheme::KaleidoFixedMask => MaskSpec::Fixed {
                members,
                keep_prob: m.fixed_keep_prob,
            },
            Scheme::KaleidoNeuronMask => MaskSpec::Learned {
                members,
                mode: MaskMode::Hard,
                granularity: Granularity::Row,
                init_value: m.threshold_init,
            },
            _ => MaskSpec::Learned {
                members,
                mode: m.mode,
                granularity: Granularity::Weight,
                init_value: m.threshold_init,
            },
        }
    }

    /// Whether the diversity term is active.
    pub fn regularized(self) -> bool {
        matches!(
            self,
            Scheme::Kaleidoscope | Scheme::KaleidoNeuronMask | Scheme::KaleidoNoReset | Scheme::KaleidoNoCe
        )
    }

    /// Whether actor and critic resets run.
    pub fn resets(self) -> bool {
        matches!(
            self,
            Scheme::Kaleidoscope | Scheme::KaleidoNeuronMask | Scheme::KaleidoNoReg | Scheme::KaleidoNoCe
        )
    }

    /// MATD3 critics form one masked ensemble (otherwise two independent critics).
    pub fn masked_critics(self) -> bool {
        matches!(
            self,
            Scheme::Kaleidoscope
                | Scheme::KaleidoFixedMask
                | Scheme::KaleidoNeuronMask
                | Scheme::KaleidoNoReg
                | Scheme::KaleidoNoReset
        )
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Scheme::ALL
            .iter()
            .copied()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown scheme {s:?}"))
    }
}

/// Independent random streams derived from one master seed.
#[derive(Debug, Clone)]
pub struct Streams {
    pub init: ChaCha8Rng,
    pub env: ChaCha8Rng,
    pub explore: ChaCha8Rng,
    pub reset: ChaCha8Rng,
    pub sample: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Self {
            init: stream(1),
            env: stream(2),
            explore: stream(3),
            reset: stream(4),
            sample: stream(5),
            noise: stream(6),
        }
    }
}

/// A sampled minibatch laid out per agent.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub state: Tensor,
    pub next_state: Tensor,
    /// `[agent]` of `[B, obs_dim]`.
    pub obs: Vec<Tensor>,
    pub next_obs: Vec<Tensor>,
    pub reward: Vec<f64>,
    /// 1.0 for terminal transitions.
    pub done: Vec<f64>,
    /// `[agent][row]` action indices (discrete tasks).
    pub discrete: Vec<Vec<usize>>,
    /// `[agent]` of `[B, action_dim]` (continuous tasks).
    pub continuous: Vec<Tensor>,
}

impl Batch {
    pub fn new(items: &[&Transition], spec: &EnvSpec) -> std::result::Result<Self, ReplayError> {
        if items.is_empty() {
            return Err(ReplayError::EmptyBatch);
        }
        for t in items {
            t.validate(spec)?;
        }
        let b = items.len();
        let n = spec.n_agents;
        let stack = |rows: Vec<&[f64]>, width: usize| {
            let data: Vec<f64> = rows.into_iter().flatten().copied().collect();
            Tensor::new(vec![b, width], data).expect("validated widths")
        };
        let state = stack(items.iter().map(|t| t.state.as_slice()).collect(), spec.state_dim);
        let next_state = stack(items.iter().map(|t| t.next_state.as_slice()).collect(), spec.state_dim);
        let obs = (0..n)
            .map(|i| stack(items.iter().map(|t| t.obs[i].as_slice()).collect(), spec.obs_dim))
            .collect();
        let next_obs = (0..n)
            .map(|i| stack(items.iter().map(|t| t.next_obs[i].as_slice()).collect(), spec.obs_dim))
            .collect();
        let (discrete, continuous) = match spec.action_space {
            ActionSpace::Discrete(_) => {
                let d = (0..n)
                    .map(|i| {
                        items
                            .iter()
                            .map(|t| match &t.action {
                                JointAction::Discrete(a) => a[i],
                                JointAction::Continuous(_) => unreachable!("validated"),
                            })
                            .collect()
                    })
                    .collect();
                (d, Vec::new())
            }
            ActionSpace::Continuous(dim) => {
                let c = (0..n)
                    .map(|i| {
                        stack(
                            items
                                .iter()
                                .map(|t| match &t.action {
                                    JointAction::Continuous(a) => a[i].as_slice(),
                                    JointAction::Discrete(_) => unreachable!("validated"),
                                })
                                .collect(),
                            dim,
                        )
                    })
                    .collect();
                (Vec::new(), c)
            }
        };
        Ok(Self {
            size: b,
            state,
            next_state,
            obs,
            next_obs,
            reward: items.iter().map(|t| t.reward).collect(),
            done: items.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
            discrete,
            continuous,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub td_loss: f64,
    pub div_loss: Option<f64>,
    pub coefficient: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ResetEvents {
    /// Coordinates redrawn by the actor reset.
    pub actor_coordinates: usize,
    /// Critic member whose thresholds were reset.
    pub critic_member: Option<usize>,
}

/// Re-initializes coordinates masked by every owner of `net`.
pub(crate) fn reset_masked_coordinates<R: Rng + ?Sized>(
    net: &Mlp,
    store: &mut ParamStore,
    rho: f64,
    rng: &mut R,
) -> std::result::Result<usize, MaskingError> {
    let mut theta: Vec<Tensor> = net.weights(store).into_iter().cloned().collect();
    let mut thresholds = net.all_thresholds(store);
    let count = masking::actor_reset(&mut theta, &mut thresholds, rho, rng, &net.reinit())?;
    if count > 0 {
        for (id, t) in net.weight_ids().into_iter().zip(theta) {
            *store.value_mut(id) = t;
        }
        net.write_thresholds(store, &thresholds);
    }
    Ok(count)
}

/// Resets the scores of one critic member and advances the cursor.
pub(crate) fn reset_critic_member(net: &Mlp, store: &mut ParamStore, cursor: usize) -> usize {
    let mut thresholds = net.all_thresholds(store);
    let next = masking::critic_cyclic_reset(&mut thresholds, cursor);
    net.write_thresholds(store, &thresholds);
    next
}

/// Mean per-agent forward FLOPs of fully connected layers under `masks`.
pub fn agent_flops(nets: &AgentNets, masks: &[MaskSet]) -> u64 {
    if masks.is_empty() {
        return 0;
    }
    let total: u64 = masks
        .iter()
        .enumerate()
        .map(|(agent, m)| {
            nets.layer_dims(agent)
                .iter()
                .zip(&m.layers)
                .map(|(&(i, o), layer)| {
                    let zeros = layer.data().iter().filter(|&&v| v == 0.0).count();
                    let sparsity = zeros as f64 / layer.len().max(1) as f64;
                    flops_fc(i, o, sparsity).expect("sparsity in range")
                })
                .sum::<u64>()
        })
        .sum();
    total / masks.len() as u64
}

/// Linearly annealed exploration rate.
pub fn epsilon_at(step: u64, start: f64, end: f64, anneal_steps: u64) -> f64 {
    if anneal_steps == 0 || step >= anneal_steps {
        return end;
    }
    start + (end - start) * step as f64 / anneal_steps as f64
}

/// How actions are perturbed while collecting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Explore {
    Greedy,
    Epsilon(f64),
    Gaussian(f64),
    /// Uniform random actions (warm-up).
    Uniform,
}

pub enum Learner {
    Qmix(QmixLearner),
    Matd3(Matd3Learner),
}

impl Learner {
    pub fn new(cfg: &RunConfig, spec: &EnvSpec, streams: &mut Streams) -> Result<Self> {
        Ok(match spec.action_space {
            ActionSpace::Discrete(_) => Learner::Qmix(QmixLearner::new(cfg, spec, &mut streams.init)),
            ActionSpace::Continuous(_) => Learner::Matd3(Matd3Learner::new(cfg, spec, &mut streams.init)),
        })
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[Vec<f64>], explore: Explore, rng: &mut R) -> Result<JointAction> {
        match self {
            Learner::Qmix(l) => Ok(JointAction::Discrete(l.act(obs, explore, rng)?)),
            Learner::Matd3(l) => Ok(JointAction::Continuous(l.act(obs, explore, rng)?)),
        }
    }

    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, noise: &mut R) -> Result<UpdateStats> {
        match self {
            Learner::Qmix(l) => l.update(batch),
            Learner::Matd3(l) => l.update(batch, noise),
        }
    }

    pub fn maybe_reset<R: Rng + ?Sized>(&mut self, step: u64, rng: &mut R) -> Result<ResetEvents> {
        match self {
            Learner::Qmix(l) => l.maybe_reset(step, rng),
            Learner::Matd3(l) => l.maybe_reset(step, rng),
        }
    }

    pub fn agent_nets(&self) -> &AgentNets {
        match self {
            Learner::Qmix(l) => &l.agents,
            Learner::Matd3(l) => &l.actors,
        }
    }

    pub fn agent_store(&self) -> &ParamStore {
        match self {
            Learner::Qmix(l) => &l.store,
            Learner::Matd3(l) => &l.actor_store,
        }
    }

    pub fn agent_masks(&self) -> Vec<MaskSet> {
        self.agent_nets().agent_masks(self.agent_store())
    }

    pub fn updates(&self) -> u64 {
        match self {
            Learner::Qmix(l) => l.updates(),
            Learner::Matd3(l) => l.updates(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub split: Split,
    pub ret: f64,
    pub td_loss: Option<f64>,
    pub div_loss: Option<f64>,
    pub sparsity: f64,
    pub mean_hamming: f64,
    pub flops_fwd: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTrace {
    pub rows: Vec<TraceRow>,
    /// Mask statistics of the agent networks at the end of training.
    pub final_masks: Option<SparsityStats>,
}

impl MetricsTrace {
    pub fn eval_rows(&self) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(|r| r.split == Split::Eval)
    }

    pub fn final_eval_return(&self) -> Option<f64> {
        self.eval_rows().last().map(|r| r.ret)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub action: JointAction,
    pub reward: f64,
    pub episode_done: bool,
    pub update: Option<UpdateStats>,
    pub resets: ResetEvents,
}

/// One training run: environment, replay, learner and random streams.
pub struct Trainer {
    cfg: RunConfig,
    seed: u64,
    env: Env,
    eval_env: Env,
    buffer: ReplayBuffer,
    learner: Learner,
    streams: Streams,
    step: u64,
    obs: Observation,
    episode_return: f64,
    finished_returns: Vec<f64>,
    td_losses: Vec<f64>,
    div_losses: Vec<f64>,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut streams = Streams::new(seed);
        let mut env = Env::new(cfg.env);
        let eval_env = Env::new(cfg.env);
        let spec = env.spec().clone();
        let learner = Learner::new(cfg, &spec, &mut streams)?;
        let obs = env.reset(streams.env.next_u64());
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            buffer: ReplayBuffer::new(cfg.buffer_size, spec),
            env,
            eval_env,
            learner,
            streams,
            step: 0,
            obs,
            episode_return: 0.0,
            finished_returns: Vec::new(),
            td_losses: Vec::new(),
            div_losses: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn learner_mut(&mut self) -> &mut Learner {
        &mut self.learner
    }

    fn explore_mode(&self) -> Explore {
        if self.step < self.cfg.warmup_steps {
            return Explore::Uniform;
        }
        match self.learner {
            Learner::Qmix(_) => {
                let q = &self.cfg.qmix;
                Explore::Epsilon(epsilon_at(self.step, q.eps_start, q.eps_end, q.eps_anneal_steps))
            }
            Learner::Matd3(_) => Explore::Gaussian(self.cfg.matd3.exploration_noise),
        }
    }

    fn non_finite(&self, what: impl Into<String>) -> TrainError {
        TrainError::NonFinite {
            what: what.into(),
            step: self.step,
            seed: self.seed,
            updates: self.learner.updates(),
        }
    }

    /// One environment step, followed by any due update and reset.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let explore = self.explore_mode();
        let action = self
            .learner
            .act(&self.obs.observations, explore, &mut self.streams.explore)
            .map_err(|e| self.tag_non_finite(e))?;
        let result = self.env.step(&action)?;
        let transition = Transition {
            state: std::mem::take(&mut self.obs.state),
            obs: std::mem::take(&mut self.obs.observations),
            action: action.clone(),
            reward: result.reward,
            next_state: result.state.clone(),
            next_obs: result.observations.clone(),
            done: result.done && !result.truncated,
        };
        self.buffer.push(transition)?;
        self.episode_return += result.reward;
        if result.done {
            self.finished_returns.push(self.episode_return);
            self.episode_return = 0.0;
            self.obs = self.env.reset(self.streams.env.next_u64());
        } else {
            self.obs = Observation {
                observations: result.observations,
                state: result.state,
            };
        }
        self.step += 1;

        let mut update = None;
        if self.step >= self.cfg.warmup_steps
            && self.step % self.cfg.train_every == 0
            && self.buffer.len() >= self.cfg.batch_size
        {
            let items = self.buffer.sample(self.cfg.batch_size, &mut self.streams.sample)?;
            let batch = Batch::new(&items, self.env.spec())?;
            let stats = self
                .learner
                .update(&batch, &mut self.streams.noise)
                .map_err(|e| self.tag_non_finite(e))?;
            if !stats.td_loss.is_finite() {
                return Err(self.non_finite("td loss"));
            }
            self.td_losses.push(stats.td_loss);
            if let Some(d) = stats.div_loss {
                self.div_losses.push(d);
            }
            update = Some(stats);
        }
        let resets = self.learner.maybe_reset(self.step, &mut self.streams.reset)?;
        Ok(StepOutcome {
            action,
            reward: result.reward,
            episode_done: result.done,
            update,
            resets,
        })
    }

    fn tag_non_finite(&self, e: TrainError) -> TrainError {
        match e {
            TrainError::Tensor(TensorError::NonFinite(op)) => self.non_finite(format!("value in {op}")),
            other => other,
        }
    }

    /// Mean return of noise-free episodes on a separate environment copy.
    pub fn evaluate(&mut self) -> Result<f64> {
        let episodes = self.cfg.eval_episodes;
        let mut total = 0.0;
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..episodes {
            let mut obs = self.eval_env.reset(self.streams.env.next_u64());
            loop {
                let action = self.learner.act(&obs.observations, Explore::Greedy, &mut unused)?;
                let r = self.eval_env.step(&action)?;
                total += r.reward;
                if r.done {
                    break;
                }
                obs = Observation {
                    observations: r.observations,
                    state: r.state,
                };
            }
        }
        Ok(total / episodes as f64)
    }

    fn mask_summary(&self) -> (SparsityStats, u64) {
        let masks = self.learner.agent_masks();
        let stats = masking::sparsity_stats(&masks);
        let flops = agent_flops(self.learner.agent_nets(), &masks);
        (stats, flops)
    }

    fn record(&mut self, rows: &mut Vec<TraceRow>) -> Result<()> {
        let ret = self.evaluate()?;
        let (stats, flops) = self.mask_summary();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let td_loss = mean(&self.td_losses);
        let div_loss = mean(&self.div_losses);
        let base = TraceRow {
            step: self.step,
            split: Split::Eval,
            ret,
            td_loss,
            div_loss,
            sparsity: stats.overall_sparsity,
            mean_hamming: stats.mean_pairwise_hamming(),
            flops_fwd: flops,
        };
        if let Some(train) = mean(&self.finished_returns) {
            rows.push(TraceRow {
                split: Split::Train,
                ret: train,
                ..base.clone()
            });
        }
        rows.push(base);
        self.finished_returns.clear();
        self.td_losses.clear();
        self.div_losses.clear();
        Ok(())
    }

    /// Runs to `total_steps`, evaluating at step 0, every `eval_interval`
    /// steps and at the end.
    pub fn run(mut self) -> Result<MetricsTrace> {
        let total = self.cfg.total_steps;
        let mut rows = Vec::new();
        if total == 0 {
            return Ok(MetricsTrace::default());
        }
        self.record(&mut rows)?;
        while self.step < total {
            self.step()?;
            if self.step % self.cfg.eval_interval == 0 || self.step == total {
                self.record(&mut rows)?;
            }
        }
        let (stats, _) = self.mask_summary();
        Ok(MetricsTrace {
            rows,
            final_masks: Some(stats),
        })
    }
}

/// Trains one seed of `cfg`.
pub fn train(cfg: &RunConfig, seed: u64) -> Result<MetricsTrace> {
    Trainer::new(cfg, seed)?.run()
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
