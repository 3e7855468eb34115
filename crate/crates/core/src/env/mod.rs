//! Cooperative toy tasks behind a small dec-POMDP interface.

mod reach;
mod spread;

pub use reach::HeteroReach;
pub use spread::{HeteroSpread, SPREAD_ACTIONS};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("malformed action: {0}")]
    MalformedAction(String),
    #[error("unknown environment {0:?}")]
    Unknown(String),
    #[error("horizon must be positive")]
    BadHorizon,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    /// Per-agent action dimension; every component lies in `[-1, 1]`.
    Continuous(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub action_space: ActionSpace,
    pub episode_limit: usize,
}

impl EnvSpec {
    /// Width of one agent's action in a joint action vector.
    pub fn action_width(&self) -> usize {
        match self.action_space {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous(d) => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JointAction {
    Discrete(Vec<usize>),
    Continuous(Vec<Vec<f64>>),
}

impl JointAction {
    /// Flat encoding used by critics: indices as reals, or concatenated vectors.
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            JointAction::Discrete(a) => a.iter().map(|&v| v as f64).collect(),
            JointAction::Continuous(a) => a.iter().flatten().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub observations: Vec<Vec<f64>>,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    pub reward: f64,
    /// Episode over (both tasks end only at the time limit).
    pub done: bool,
    /// The episode ended because of the time limit rather than a terminal state.
    pub truncated: bool,
}

pub trait Environment {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, seed: u64) -> Observation;
    fn step(&mut self, action: &JointAction) -> Result<StepResult, EnvError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvName {
    HeteroSpread,
    HeteroReach,
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvName::HeteroSpread => "hetero_spread",
            EnvName::HeteroReach => "hetero_reach",
        })
    }
}

impl FromStr for EnvName {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hetero_spread" => Ok(EnvName::HeteroSpread),
            "hetero_reach" => Ok(EnvName::HeteroReach),
            other => Err(EnvError::Unknown(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Spread(HeteroSpread),
    Reach(HeteroReach),
}

impl Env {
    pub fn new(name: EnvName) -> Self {
        match name {
            EnvName::HeteroSpread => Env::Spread(HeteroSpread::new()),
            EnvName::HeteroReach => Env::Reach(HeteroReach::new()),
        }
    }
}

impl Environment for Env {
    fn spec(&self) -> &EnvSpec {
        match self {
            Env::Spread(e) => e.spec(),
            Env::Reach(e) => e.spec(),
        }
    }

    fn reset(&mut self, seed: u64) -> Observation {
        match self {
            Env::Spread(e) => e.reset(seed),
            Env::Reach(e) => e.reset(seed),
        }
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult, EnvError> {
        match self {
            Env::Spread(e) => e.step(action),
            Env::Reach(e) => e.step(action),
        }
    }
}
