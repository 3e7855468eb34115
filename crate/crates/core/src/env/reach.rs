//! HeteroReach: three point masses leave the origin together and should
//! cover three targets on the unit circle, one each.

use super::{ActionSpace, EnvError, EnvSpec, Environment, JointAction, Observation, StepResult};

const DT: f64 = 0.1;
const COLLISION_RADIUS: f64 = 0.1;
const COLLISION_PENALTY: f64 = 0.25;
const N_AGENTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroReach {
    spec: EnvSpec,
    agents: Vec<[f64; 2]>,
    targets: Vec<[f64; 2]>,
    t: usize,
}

impl Default for HeteroReach {
    fn default() -> Self {
        Self::new()
    }
}

impl HeteroReach {
    pub fn new() -> Self {
        let targets = (0..N_AGENTS)
            .map(|k| {
                let angle = std::f64::consts::FRAC_PI_2 + k as f64 * 2.0 * std::f64::consts::PI / N_AGENTS as f64;
                [angle.cos(), angle.sin()]
            })
            .collect::<Vec<_>>();
        Self {
            spec: EnvSpec {
                n_agents: N_AGENTS,
                // own position, targets relative to self, other agents relative to self
                obs_dim: 2 + 2 * N_AGENTS + 2 * (N_AGENTS - 1),
                state_dim: 2 * N_AGENTS + 2 * N_AGENTS,
                action_space: ActionSpace::Continuous(2),
                episode_limit: 25,
            },
            agents: vec![[0.0, 0.0]; N_AGENTS],
            targets,
            t: 0,
        }
    }

    pub fn agents(&self) -> &[[f64; 2]] {
        &self.agents
    }

    pub fn targets(&self) -> &[[f64; 2]] {
        &self.targets
    }

    pub fn set_agents(&mut self, pos: &[[f64; 2]]) {
        assert_eq!(pos.len(), N_AGENTS);
        self.agents = pos.to_vec();
    }

    /// `-mean_t min_i |target_t - agent_i| - 0.25 * #pairs closer than 0.1`.
    pub fn reward(&self) -> f64 {
        let cover: f64 = self
            .targets
            .iter()
            .map(|t| {
                self.agents
                    .iter()
                    .map(|a| dist(*a, *t))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / self.targets.len() as f64;
        let mut pairs = 0;
        for i in 0..self.agents.len() {
            for j in i + 1..self.agents.len() {
                if dist(self.agents[i], self.agents[j]) < COLLISION_RADIUS {
                    pairs += 1;
                }
            }
        }
        -cover - COLLISION_PENALTY * pairs as f64
    }

    fn observe(&self) -> Observation {
        let observations = (0..N_AGENTS)
            .map(|i| {
                let me = self.agents[i];
                let mut o = Vec::with_capacity(self.spec.obs_dim);
                o.extend_from_slice(&me);
                for t in &self.targets {
                    o.push(t[0] - me[0]);
                    o.push(t[1] - me[1]);
                }
                for (j, a) in self.agents.iter().enumerate() {
                    if j != i {
                        o.push(a[0] - me[0]);
                        o.push(a[1] - me[1]);
                    }
                }
                o
            })
            .collect();
        let state = self
            .agents
            .iter()
            .chain(&self.targets)
            .flat_map(|p| p.iter().copied())
            .collect();
        Observation { observations, state }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Environment for HeteroReach {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.agents = vec![[0.0, 0.0]; N_AGENTS];
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult, EnvError> {
        let JointAction::Continuous(actions) = action else {
            return Err(EnvError::MalformedAction("expected continuous actions".into()));
        };
        if actions.len() != N_AGENTS || actions.iter().any(|a| a.len() != 2) {
            return Err(EnvError::MalformedAction(format!(
                "expected {N_AGENTS} two-dimensional actions"
            )));
        }
        if actions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EnvError::MalformedAction("non-finite action".into()));
        }
        for (p, a) in self.agents.iter_mut().zip(actions) {
            p[0] += DT * a[0].clamp(-1.0, 1.0);
            p[1] += DT * a[1].clamp(-1.0, 1.0);
        }
        self.t += 1;
        let reward = self.reward();
        let done = self.t >= self.spec.episode_limit;
        let obs = self.observe();
        Ok(StepResult {
            observations: obs.observations,
            state: obs.state,
            reward,
            done,
            truncated: done,
        })
    }
}
