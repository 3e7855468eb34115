//! Config parsing, multi-seed runs, FLOPs accounting and run comparison.

pub mod compare;
pub mod config;
pub mod flops;
pub mod run;
pub mod selftest;

use std::path::PathBuf;

use thiserror::Error;

use crate::trainers::TrainError;

pub use compare::{compare, mean_ci95, CompareReport, SchemeSummary};
pub use config::{ConfigError, RunConfig};
pub use flops::{flops_fc, flops_gru, Arch, FlopsError};
pub use run::{read_metrics, run_experiment, MetricsRow, RunOptions, RunSummary};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed {seed}: {source}")]
    Train { seed: u64, source: TrainError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Flops(#[from] FlopsError),
    #[error("{0} already holds a run; pass --force to overwrite")]
    Exists(PathBuf),
    #[error("{dir} was run on {other}, but earlier directories used {first}")]
    MismatchedEnvs { first: String, other: String, dir: PathBuf },
    #[error("{0} has no evaluation rows")]
    NoRuns(PathBuf),
    #[error("{0}")]
    BadMetrics(String),
}
