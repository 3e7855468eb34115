//! HeteroSpread: four agents on a 7x7 grid must each claim a different landmark.
//!
//! Agents start on the four cells diagonally next to the grid corners and the
//! landmarks sit at the edge midpoints. Every agent receives the same
//! observation (landmarks plus the agents' positions in sorted order, with no
//! self-identification), so a fully shared network without agent ids must
//! pick the same action for every agent.

use std::collections::HashMap;

use super::{ActionSpace, EnvError, EnvSpec, Environment, JointAction, Observation, StepResult};

pub const GRID: i32 = 7;
pub const SPREAD_ACTIONS: usize = 5;
const COLLISION_PENALTY: f64 = 0.1;

type Cell = (i32, i32);

const STARTS: [Cell; 4] = [(1, 1), (5, 1), (1, 5), (5, 5)];
const LANDMARKS: [Cell; 4] = [(3, 0), (0, 3), (6, 3), (3, 6)];

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroSpread {
    spec: EnvSpec,
    agents: Vec<Cell>,
    landmarks: Vec<Cell>,
    t: usize,
}

impl Default for HeteroSpread {
    fn default() -> Self {
        Self::new()
    }
}

impl HeteroSpread {
    pub fn new() -> Self {
        let n = STARTS.len();
        let l = LANDMARKS.len();
        Self {
            spec: EnvSpec {
                n_agents: n,
                obs_dim: 2 * (l + n - 1) + 2,
                state_dim: 2 * (n + l),
                action_space: ActionSpace::Discrete(SPREAD_ACTIONS),
                episode_limit: 25,
            },
            agents: STARTS.to_vec(),
            landmarks: LANDMARKS.to_vec(),
            t: 0,
        }
    }

    pub fn agents(&self) -> &[(i32, i32)] {
        &self.agents
    }

    pub fn landmarks(&self) -> &[(i32, i32)] {
        &self.landmarks
    }

    pub fn time(&self) -> usize {
        self.t
    }

    /// Places agents directly (test and oracle helper).
    pub fn set_agents(&mut self, cells: &[(i32, i32)]) {
        assert_eq!(cells.len(), self.agents.len());
        self.agents = cells.to_vec();
    }

    /// `#landmarks with exactly one agent / N - 0.1 * #colliding pairs`.
    pub fn reward_for(&self, cells: &[Cell]) -> f64 {
        let covered = self
            .landmarks
            .iter()
            .filter(|lm| cells.iter().filter(|c| c == lm).count() == 1)
            .count();
        let mut pairs = 0;
        for i in 0..cells.len() {
            for j in i + 1..cells.len() {
                if cells[i] == cells[j] {
                    pairs += 1;
                }
            }
        }
        covered as f64 / self.agents.len() as f64 - COLLISION_PENALTY * pairs as f64
    }

    pub fn reward(&self) -> f64 {
        self.reward_for(&self.agents)
    }

    fn moved(cell: Cell, action: usize) -> Cell {
        let (x, y) = cell;
        let (nx, ny) = match action {
            1 => (x, y + 1),
            2 => (x, y - 1),
            3 => (x - 1, y),
            4 => (x + 1, y),
            _ => (x, y),
        };
        (nx.clamp(0, GRID - 1), ny.clamp(0, GRID - 1))
    }

    fn observe(&self) -> Observation {
        let scale = (GRID - 1) as f64;
        let mut shared = Vec::with_capacity(self.spec.obs_dim);
        for &(x, y) in &self.landmarks {
            shared.push(x as f64 / scale);
            shared.push(y as f64 / scale);
        }
        let mut sorted = self.agents.clone();
        sorted.sort_unstable();
        for &(x, y) in &sorted {
            shared.push(x as f64 / scale);
            shared.push(y as f64 / scale);
        }
        let mut state = Vec::with_capacity(self.spec.state_dim);
        for &(x, y) in self.agents.iter().chain(&self.landmarks) {
            state.push(x as f64 / scale);
            state.push(y as f64 / scale);
        }
        Observation {
            observations: vec![shared; self.agents.len()],
            state,
        }
    }

    /// Return of the scripted policy that sends each agent along a shortest
    /// path to its own landmark, over the next `horizon` steps (capped at the
    /// remaining episode). Works on a copy; `self` is untouched.
    pub fn oracle_return(&self, horizon: usize) -> Result<f64, EnvError> {
        if horizon == 0 {
            return Err(EnvError::BadHorizon);
        }
        let assignment = best_assignment(&self.agents, &self.landmarks);
        let mut sim = self.clone();
        let steps = horizon.min(self.spec.episode_limit - self.t);
        let mut total = 0.0;
        for _ in 0..steps {
            let actions = sim
                .agents
                .iter()
                .zip(&assignment)
                .map(|(&(x, y), &lm)| {
                    let (tx, ty) = sim.landmarks[lm];
                    if x < tx {
                        4
                    } else if x > tx {
                        3
                    } else if y < ty {
                        1
                    } else if y > ty {
                        2
                    } else {
                        0
                    }
                })
                .collect();
            let r = sim.step(&JointAction::Discrete(actions))?;
            total += r.reward;
        }
        Ok(total)
    }

    /// Best return over the next `horizon` steps for joint policies in which
    /// every agent takes the same action each step. Exhaustive dynamic
    /// programming over the reachable configurations.
    pub fn identical_action_bound(&self, horizon: usize) -> f64 {
        let steps = horizon.min(self.spec.episode_limit - self.t);
        let mut memo: HashMap<(Vec<Cell>, usize), f64> = HashMap::new();
        self.best_identical(&self.agents.clone(), steps, &mut memo)
    }

    fn best_identical(&self, cells: &[Cell], steps: usize, memo: &mut HashMap<(Vec<Cell>, usize), f64>) -> f64 {
        if steps == 0 {
            return 0.0;
        }
        let key = (cells.to_vec(), steps);
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let mut best = f64::NEG_INFINITY;
        for a in 0..SPREAD_ACTIONS {
            let next: Vec<Cell> = cells.iter().map(|&c| Self::moved(c, a)).collect();
            let v = self.reward_for(&next) + self.best_identical(&next, steps - 1, memo);
            best = best.max(v);
        }
        memo.insert(key, best);
        best
    }
}

fn manhattan(a: Cell, b: Cell) -> i32 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

/// Agent-to-landmark assignment minimizing the longest walk, then the total.
fn best_assignment(agents: &[Cell], landmarks: &[Cell]) -> Vec<usize> {
    let n = agents.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = (i32::MAX, i32::MAX);
    loop {
        let dists: Vec<i32> = perm.iter().enumerate().map(|(i, &l)| manhattan(agents[i], landmarks[l])).collect();
        let cost = (*dists.iter().max().unwrap_or(&0), dists.iter().sum());
        if cost < best_cost {
            best_cost = cost;
            best = perm.clone();
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

impl Environment for HeteroSpread {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.agents = STARTS.to_vec();
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult, EnvError> {
        let JointAction::Discrete(actions) = action else {
            return Err(EnvError::MalformedAction("expected discrete actions".into()));
        };
        if actions.len() != self.agents.len() {
            return Err(EnvError::MalformedAction(format!(
                "expected {} actions, got {}",
                self.agents.len(),
                actions.len()
            )));
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= SPREAD_ACTIONS) {
            return Err(EnvError::MalformedAction(format!("action index {bad} out of range")));
        }
        for (cell, &a) in self.agents.iter_mut().zip(actions) {
            *cell = Self::moved(*cell, a);
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
