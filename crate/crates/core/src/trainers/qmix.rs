//! QMIX-lite: per-agent utility networks (where sharing applies) combined by
//! a monotonic mixer, trained on one-step TD targets.

use rand::Rng;

use super::{
    apply_diversity, argmax, reset_masked_coordinates, Batch, Explore, ResetEvents, Result, TrainError, UpdateStats,
};
use crate::env::{ActionSpace, EnvSpec};
use crate::harness::config::{Precision, QmixConfig, RunConfig};
use crate::networks::{target_update, ActingCache, AgentNets, Bind, MixingNet, TargetMode};
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub struct QmixLearner {
    pub agents: AgentNets,
    pub mixer: MixingNet,
    pub store: ParamStore,
    pub target: ParamStore,
    cfg: QmixConfig,
    beta: f64,
    layer_weight_base: f64,
    rho: f64,
    regularized: bool,
    reset_interval: Option<u64>,
    precision: Precision,
    n_actions: usize,
    updates: u64,
    acting: ActingCache,
}

impl QmixLearner {
    pub fn new<R: Rng + ?Sized>(cfg: &RunConfig, spec: &EnvSpec, rng: &mut R) -> Self {
        let ActionSpace::Discrete(n_actions) = spec.action_space else {
            panic!("qmix needs a discrete action space");
        };
        let mut store = ParamStore::new();
        let scheme = cfg.scheme;
        let agents = AgentNets::new(
            &mut store,
            rng,
            "agent",
            scheme.sharing(),
            spec.n_agents,
            spec.obs_dim,
            &cfg.hidden_sizes,
            n_actions,
            None,
            scheme.mask_spec(spec.n_agents, &cfg.masking),
        );
        let mixer = MixingNet::new(&mut store, rng, spec.n_agents, spec.state_dim, cfg.qmix.mixer_embed);
        let target = store.clone();
        Self {
            agents,
            mixer,
            target,
            store,
            cfg: cfg.qmix.clone(),
            beta: cfg.masking.beta,
            layer_weight_base: cfg.masking.layer_weight_base,
            rho: cfg.masking.rho,
            regularized: scheme.regularized(),
            reset_interval: if scheme.resets() { cfg.actor_reset_steps() } else { None },
            precision: cfg.precision,
            n_actions,
            updates: 0,
            acting: ActingCache::default(),
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Utilities of one agent for a single observation.
    pub fn q_values(&self, agent: usize, obs: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor::new(vec![1, obs.len()], obs.to_vec())?;
        Ok(self.acting.eval(&self.agents, &self.store, &x, agent)?.into_data())
    }

    /// Epsilon-greedy selection. Every agent draws one uniform number to
    /// decide, and a second one only when it explores.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[Vec<f64>], explore: Explore, rng: &mut R) -> Result<Vec<usize>> {
        obs.iter()
            .enumerate()
            .map(|(i, o)| {
                let eps = match explore {
                    Explore::Greedy | Explore::Gaussian(_) => 0.0,
                    Explore::Epsilon(e) => e,
                    Explore::Uniform => 1.0,
                };
                if eps > 0.0 && rng.random::<f64>() < eps {
                    return Ok(rng.random_range(0..self.n_actions));
                }
                Ok(argmax(&self.q_values(i, o)?))
            })
            .collect()
    }

    /// One gradient step on the mixed TD loss (plus the diversity term).
    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        let n = self.agents.n_agents;
        let b = batch.size;
        let mut next_cols = Vec::with_capacity(n);
        for i in 0..n {
            let target_q = self.agents.eval(&self.target, &batch.next_obs[i], i)?;
            let live_q = if self.cfg.double_q {
                Some(self.agents.eval(&self.store, &batch.next_obs[i], i)?)
            } else {
                None
            };
            let picks = next_actions(live_q.as_ref(), &target_q);
            next_cols.push(select(&target_q, &picks));
        }
        let next_qs = columns(&next_cols, b)?;
        let next_tot = self.mixer.eval(&self.target, &next_qs, &batch.next_state)?;
        let y: Vec<f64> = (0..b)
            .map(|r| td_target(batch.reward[r], batch.done[r], self.cfg.gamma, next_tot.data()[r]))
            .collect();

        let mut tape = Tape::new();
        let mut chosen = Vec::with_capacity(n);
        for i in 0..n {
            let q = self.agents.forward(&mut tape, Bind::Live(&self.store), &batch.obs[i], i)?;
            chosen.push(tape.gather_cols(q, &batch.discrete[i])?);
        }
        let qs = tape.concat_cols(&chosen)?;
        let state = tape.constant(batch.state.clone());
        let q_tot = self.mixer.forward(&mut tape, Bind::Live(&self.store), qs, state)?;
        let y = tape.constant(Tensor::new(vec![b, 1], y)?);
        let err = tape.sub(q_tot, y)?;
        let sq = tape.square(err);
        let loss = tape.mean(sq);
        let td_loss = tape.value(loss).item()?;
        self.store.zero_grad();
        tape.backward(loss, &mut self.store)?;

        let div = if self.regularized {
            apply_diversity(
                self.agents.shared(),
                &mut self.store,
                self.beta,
                td_loss,
                self.layer_weight_base,
            )?
        } else {
            None
        };
        if !self.store.grads_finite() {
            return Err(TrainError::NonFinite {
                what: "gradient".into(),
                step: 0,
                seed: 0,
                updates: self.updates,
            });
        }
        self.store.adam_step(self.cfg.lr);
        if self.precision == Precision::F32 {
            self.store.round_to_f32();
        }
        self.updates += 1;
        if self.updates % self.cfg.target_update_interval == 0 {
            target_update(&self.store, &mut self.target, TargetMode::Hard)?;
        }
        Ok(UpdateStats {
            td_loss,
            div_loss: div.map(|d| d.objective),
            coefficient: div.map(|d| d.coefficient),
        })
    }

    pub fn maybe_reset<R: Rng + ?Sized>(&mut self, step: u64, rng: &mut R) -> Result<ResetEvents> {
        let mut events = ResetEvents::default();
        if let Some(every) = self.reset_interval {
            if step > 0 && step % every == 0 {
                events.actor_coordinates = reset_masked_coordinates(self.agents.shared(), &mut self.store, self.rho, rng)?;
            }
        }
        Ok(events)
    }
}

/// `r + gamma * (1 - done) * next`.
pub fn td_target(reward: f64, done: f64, gamma: f64, next: f64) -> f64 {
    reward + gamma * (1.0 - done) * next
}

/// Greedy next actions: chosen by the live network when given (double Q),
/// otherwise by the target network itself.
pub fn next_actions(live: Option<&Tensor>, target: &Tensor) -> Vec<usize> {
    let chooser = live.unwrap_or(target);
    let (rows, _) = chooser.dims2();
    (0..rows).map(|r| argmax(chooser.row(r))).collect()
}

fn select(q: &Tensor, picks: &[usize]) -> Vec<f64> {
    picks.iter().enumerate().map(|(r, &a)| q.row(r)[a]).collect()
}

fn columns(cols: &[Vec<f64>], rows: usize) -> Result<Tensor> {
    let n = cols.len();
    let mut data = vec![0.0; rows * n];
    for (c, col) in cols.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            data[r * n + c] = v;
        }
    }
    Ok(Tensor::new(vec![rows, n], data)?)
}
