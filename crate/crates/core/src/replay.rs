//! Uniform ring-buffer replay.

use rand::Rng;
use thiserror::Error;

use crate::env::{EnvSpec, JointAction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("transition does not match the environment spec: {0}")]
    Shape(String),
    #[error("cannot sample {batch} transitions from a buffer holding {size}")]
    Insufficient { batch: usize, size: usize },
    #[error("batch size must be positive")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub action: JointAction,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    /// Terminal (no bootstrap). Time-limit truncations are not terminal.
    pub done: bool,
}

impl Transition {
    pub fn validate(&self, spec: &EnvSpec) -> Result<(), ReplayError> {
        let bad = |m: &str| Err(ReplayError::Shape(m.to_string()));
        if self.state.len() != spec.state_dim || self.next_state.len() != spec.state_dim {
            return bad("state dim");
        }
        if self.obs.len() != spec.n_agents || self.next_obs.len() != spec.n_agents {
            return bad("agent count");
        }
        if self
            .obs
            .iter()
            .chain(&self.next_obs)
            .any(|o| o.len() != spec.obs_dim)
        {
            return bad("obs dim");
        }
        let ok = match (&self.action, spec.action_space) {
            (JointAction::Discrete(a), crate::env::ActionSpace::Discrete(n)) => {
                a.len() == spec.n_agents && a.iter().all(|&x| x < n)
            }
            (JointAction::Continuous(a), crate::env::ActionSpace::Continuous(d)) => {
                a.len() == spec.n_agents && a.iter().all(|x| x.len() == d)
            }
            _ => false,
        };
        if !ok {
            return bad("action");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
    spec: EnvSpec,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, spec: EnvSpec) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
            spec,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Next write slot.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn push(&mut self, t: Transition) -> Result<(), ReplayError> {
        t.validate(&self.spec)?;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>, ReplayError> {
        if batch == 0 {
            return Err(ReplayError::EmptyBatch);
        }
        if self.items.len() < batch {
            return Err(ReplayError::Insufficient {
                batch,
                size: self.items.len(),
            });
        }
        Ok(self.sample_indices(batch, rng).into_iter().map(|i| &self.items[i]).collect())
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        (0..batch).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}
