//! MATD3-lite: deterministic actors with a centralized critic set, either a
//! masked shared ensemble of `K` members or two independent critics.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{
    apply_diversity, reset_critic_member, reset_masked_coordinates, Batch, Explore, ResetEvents, Result,
    TrainError, UpdateStats,
};
use crate::env::{ActionSpace, EnvSpec};
use crate::harness::config::{Matd3Config, Precision, RunConfig};
use crate::networks::{target_update, ActingCache, AgentNets, Bind, CriticSet, MaskSpec, Mlp, TargetMode};
use crate::params::ParamStore;
use crate::tape::{Activation, Tape, Var};
use crate::tensor::Tensor;

pub struct Matd3Learner {
    pub actors: AgentNets,
    pub critics: CriticSet,
    pub actor_store: ParamStore,
    pub actor_target: ParamStore,
    pub critic_store: ParamStore,
    pub critic_target: ParamStore,
    cfg: Matd3Config,
    alpha: f64,
    beta: f64,
    rho: f64,
    layer_weight_base: f64,
    regularized: bool,
    actor_reset_interval: Option<u64>,
    critic_reset_interval: Option<u64>,
    critic_cursor: usize,
    precision: Precision,
    action_dim: usize,
    critic_updates: u64,
    acting: ActingCache,
}

/// Actor-step statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorStats {
    pub pg_loss: f64,
    pub div_loss: Option<f64>,
    pub coefficient: Option<f64>,
}

impl Matd3Learner {
    pub fn new<R: Rng + ?Sized>(cfg: &RunConfig, spec: &EnvSpec, rng: &mut R) -> Self {
        let ActionSpace::Continuous(action_dim) = spec.action_space else {
            panic!("matd3 needs a continuous action space");
        };
        let scheme = cfg.scheme;
        let mut actor_store = ParamStore::new();
        let actors = AgentNets::new(
            &mut actor_store,
            rng,
            "actor",
            scheme.sharing(),
            spec.n_agents,
            spec.obs_dim,
            &cfg.hidden_sizes,
            action_dim,
            Some(Activation::Tanh),
            scheme.mask_spec(spec.n_agents, &cfg.masking),
        );
        let mut critic_store = ParamStore::new();
        let mut dims = vec![spec.state_dim + spec.n_agents * action_dim];
        dims.extend_from_slice(&cfg.critic_hidden_sizes);
        dims.push(1);
        let k = cfg.matd3.ensemble_size;
        let critics = if scheme.masked_critics() {
            let spec = match scheme.mask_spec(k, &cfg.masking) {
                // a single member has nothing to share with
                MaskSpec::Learned { .. } | MaskSpec::Fixed { .. } if k == 1 => MaskSpec::None,
                other => other,
            };
            CriticSet::Ensemble(Mlp::new(&mut critic_store, rng, "critic", &dims, true, None, spec))
        } else {
            CriticSet::Independent(
                (0..2)
                    .map(|j| Mlp::new(&mut critic_store, rng, &format!("critic{j}"), &dims, false, None, MaskSpec::None))
                    .collect(),
            )
        };
        let resets = scheme.resets();
        Self {
            actors,
            critics,
            actor_target: actor_store.clone(),
            critic_target: critic_store.clone(),
            actor_store,
            critic_store,
            cfg: cfg.matd3.clone(),
            alpha: cfg.masking.alpha,
            beta: cfg.masking.beta,
            rho: cfg.masking.rho,
            layer_weight_base: cfg.masking.layer_weight_base,
            regularized: scheme.regularized(),
            actor_reset_interval: if resets { cfg.actor_reset_steps() } else { None },
            critic_reset_interval: if resets { cfg.critic_reset_steps() } else { None },
            critic_cursor: 0,
            precision: cfg.precision,
            action_dim,
            critic_updates: 0,
            acting: ActingCache::default(),
        }
    }

    pub fn updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn critic_cursor(&self) -> usize {
        self.critic_cursor
    }

    pub fn policy(&self, agent: usize, obs: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor::new(vec![1, obs.len()], obs.to_vec())?;
        Ok(self.acting.eval(&self.actors, &self.actor_store, &x, agent)?.into_data())
    }

    /// `clip(pi_i(o_i) + N(0, sigma), -1, 1)`; uniform actions during warm-up.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[Vec<f64>], explore: Explore, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        obs.iter()
            .enumerate()
            .map(|(i, o)| {
                if explore == Explore::Uniform {
                    return Ok((0..self.action_dim).map(|_| rng.random_range(-1.0..=1.0)).collect());
                }
                let mut a = self.policy(i, o)?;
                if let Explore::Gaussian(sigma) = explore {
                    if sigma > 0.0 {
                        let normal = Normal::new(0.0, sigma).expect("positive sigma");
                        for v in &mut a {
                            *v = (*v + normal.sample(rng)).clamp(-1.0, 1.0);
                        }
                    }
                }
                Ok(a)
            })
            .collect()
    }

    /// A critic step, and an actor step plus target updates every
    /// `policy_delay` critic steps.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, noise: &mut R) -> Result<UpdateStats> {
        let critic = self.critic_update(batch, noise)?;
        if self.critic_updates % self.cfg.policy_delay == 0 {
            self.actor_update(batch)?;
            target_update(&self.actor_store, &mut self.actor_target, TargetMode::Polyak(self.cfg.tau))?;
            target_update(&self.critic_store, &mut self.critic_target, TargetMode::Polyak(self.cfg.tau))?;
        }
        Ok(critic)
    }

    fn critic_eval(&self, store: &ParamStore, input: &Tensor, member: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let q = self.critics.forward(&mut tape, Bind::Frozen(store), x, member)?;
        Ok(tape.value(q).clone())
    }

    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &Batch, noise: &mut R) -> Result<UpdateStats> {
        let n = self.actors.n_agents;
        let b = batch.size;
        let smoothing = Normal::new(0.0, self.cfg.target_noise.max(1e-300)).expect("finite sigma");
        let mut next_actions = Vec::with_capacity(n);
        for i in 0..n {
            let mut a = self.actors.eval(&self.actor_target, &batch.next_obs[i], i)?;
            for v in a.data_mut() {
                let eps = if self.cfg.target_noise > 0.0 {
                    smoothing.sample(noise).clamp(-self.cfg.noise_clip, self.cfg.noise_clip)
                } else {
                    0.0
                };
                *v = (*v + eps).clamp(-1.0, 1.0);
            }
            next_actions.push(a);
        }
        let mut parts: Vec<&Tensor> = vec![&batch.next_state];
        parts.extend(next_actions.iter());
        let next_input = Tensor::concat_cols(&parts)?;
        let k = self.critics.members();
        let member_qs = (0..k)
            .map(|j| self.critic_eval(&self.critic_target, &next_input, j))
            .collect::<Result<Vec<_>>>()?;
        let y: Vec<f64> = (0..b)
            .map(|r| {
                let qs: Vec<f64> = member_qs.iter().map(|q| q.data()[r]).collect();
                ensemble_target(batch.reward[r], batch.done[r], self.cfg.gamma, &qs)
            })
            .collect();

        let mut parts: Vec<&Tensor> = vec![&batch.state];
        parts.extend(batch.continuous.iter());
        let input = Tensor::concat_cols(&parts)?;
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let y = tape.constant(Tensor::new(vec![b, 1], y)?);
        let mut total: Option<Var> = None;
        for j in 0..k {
            let q = self.critics.forward(&mut tape, Bind::Live(&self.critic_store), x, j)?;
            let e = tape.sub(q, y)?;
            let sq = tape.square(e);
            let td = tape.mean(sq);
            total = Some(match total {
                None => td,
                Some(t) => tape.add(t, td)?,
            });
        }
        let loss = total.expect("at least one critic");
        let td_loss = tape.value(loss).item()?;
        self.critic_store.zero_grad();
        tape.backward(loss, &mut self.critic_store)?;
        let div = match (self.regularized, self.critics.masked()) {
            (true, Some(net)) => apply_diversity(net, &mut self.critic_store, self.alpha, td_loss, self.layer_weight_base)?,
            _ => None,
        };
        check_grads(&self.critic_store, "critic gradient", self.critic_updates)?;
        self.critic_store.adam_step(self.cfg.critic_lr);
        if self.precision == Precision::F32 {
            self.critic_store.round_to_f32();
        }
        self.critic_updates += 1;
        Ok(UpdateStats {
            td_loss,
            div_loss: div.map(|d| d.objective),
            coefficient: div.map(|d| d.coefficient),
        })
    }

    pub fn actor_update(&mut self, batch: &Batch) -> Result<ActorStats> {
        let k = self.critics.members();
        let critics = &self.critics;
        let critic_store = &self.critic_store;
        self.actor_store.zero_grad();
        let pg_loss = policy_gradient_step(
            &self.actors,
            &mut self.actor_store,
            batch,
            k,
            |tape, state, actions, j| {
                let mut parts = vec![state];
                parts.extend_from_slice(actions);
                let x = tape.concat_cols(&parts)?;
                Ok(critics.forward(tape, Bind::Frozen(critic_store), x, j)?)
            },
        )?;
        let div = if self.regularized {
            apply_diversity(
                self.actors.shared(),
                &mut self.actor_store,
                self.beta,
                pg_loss,
                self.layer_weight_base,
            )?
        } else {
            None
        };
        check_grads(&self.actor_store, "actor gradient", self.critic_updates)?;
        self.actor_store.adam_step(self.cfg.actor_lr);
        if self.precision == Precision::F32 {
            self.actor_store.round_to_f32();
        }
        Ok(ActorStats {
            pg_loss,
            div_loss: div.map(|d| d.objective),
            coefficient: div.map(|d| d.coefficient),
        })
    }

    pub fn maybe_reset<R: Rng + ?Sized>(&mut self, step: u64, rng: &mut R) -> Result<ResetEvents> {
        let mut events = ResetEvents::default();
        if step == 0 {
            return Ok(events);
        }
        if let Some(every) = self.actor_reset_interval {
            if step % every == 0 {
                events.actor_coordinates =
                    reset_masked_coordinates(self.actors.shared(), &mut self.actor_store, self.rho, rng)?;
            }
        }
        if let (Some(every), Some(net)) = (self.critic_reset_interval, self.critics.masked()) {
            if step % every == 0 {
                events.critic_member = Some(self.critic_cursor);
                self.critic_cursor = reset_critic_member(net, &mut self.critic_store, self.critic_cursor);
            }
        }
        Ok(events)
    }
}

fn check_grads(store: &ParamStore, what: &str, updates: u64) -> Result<()> {
    if store.grads_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFinite {
            what: what.into(),
            step: 0,
            seed: 0,
            updates,
        })
    }
}

/// `r + gamma * (1 - done) * min_j q_j`.
pub fn ensemble_target(reward: f64, done: f64, gamma: f64, member_qs: &[f64]) -> f64 {
    let min = member_qs.iter().copied().fold(f64::INFINITY, f64::min);
    reward + gamma * (1.0 - done) * min
}

/// Accumulates into `store` the gradient of
/// `-sum_i mean_batch (1/K) sum_j Q_j(s, a_-i, pi_i(o_i))`, where the other
/// agents' actions come from the batch. `critic(tape, state, joint_actions,
/// member)` evaluates member `j`; its parameters must not be live. Returns the loss.
pub fn policy_gradient_step<F>(
    actors: &AgentNets,
    store: &mut ParamStore,
    batch: &Batch,
    members: usize,
    mut critic: F,
) -> Result<f64>
where
    F: FnMut(&mut Tape, Var, &[Var], usize) -> Result<Var>,
{
    let n = actors.n_agents;
    let mut tape = Tape::new();
    let state = tape.constant(batch.state.clone());
    let buffered: Vec<Var> = batch.continuous.iter().map(|a| tape.constant(a.clone())).collect();
    let mut total: Option<Var> = None;
    for i in 0..n {
        let own = actors.forward(&mut tape, Bind::Live(store), &batch.obs[i], i)?;
        let mut joint = buffered.clone();
        joint[i] = own;
        let mut q_sum: Option<Var> = None;
        for j in 0..members {
            let q = critic(&mut tape, state, &joint, j)?;
            let q = tape.mean(q);
            q_sum = Some(match q_sum {
                None => q,
                Some(s) => tape.add(s, q)?,
            });
        }
        let q_mean = tape.scale(q_sum.expect("at least one member"), -1.0 / members as f64);
        total = Some(match total {
            None => q_mean,
            Some(t) => tape.add(t, q_mean)?,
        });
    }
    let loss = total.expect("at least one agent");
    let value = tape.value(loss).item()?;
    tape.backward(loss, store)?;
    Ok(value)
}
