//! Multi-seed execution and the run directory layout:
//! `resolved.cfg`, `metrics.csv` and `masks_final.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::HarnessError;
use crate::trainers::{self, MetricsTrace, TrainError};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MASKS_FILE: &str = "masks_final.json";
pub const RESOLVED_FILE: &str = "resolved.cfg";
pub const METRICS_HEADER: [&str; 10] = [
    "step",
    "seed",
    "scheme",
    "split",
    "return",
    "td_loss",
    "div_loss",
    "sparsity",
    "mean_hamming",
    "flops_fwd",
];

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub seed: u64,
    pub scheme: String,
    pub split: String,
    #[serde(rename = "return")]
    pub ret: f64,
    pub td_loss: Option<f64>,
    pub div_loss: Option<f64>,
    pub sparsity: f64,
    pub mean_hamming: f64,
    pub flops_fwd: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub agent_id: usize,
    pub layer: usize,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMasks {
    pub seed: u64,
    pub layers: Vec<LayerSparsity>,
    /// `hamming[i][j]`: fraction of coordinates where agents i and j disagree.
    pub hamming: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasksFile {
    pub scheme: String,
    pub seeds: Vec<SeedMasks>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub force: bool,
    /// Upper bound on concurrently running seeds.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            force: false,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub rows: usize,
    /// Final eval return per seed, in seed-list order.
    pub final_returns: Vec<(u64, Option<f64>)>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn trace_rows(trace: &MetricsTrace, seed: u64, scheme: &str) -> Vec<MetricsRow> {
    trace
        .rows
        .iter()
        .map(|r| MetricsRow {
            step: r.step,
            seed,
            scheme: scheme.to_string(),
            split: r.split.to_string(),
            ret: r.ret,
            td_loss: r.td_loss,
            div_loss: r.div_loss,
            sparsity: r.sparsity,
            mean_hamming: r.mean_hamming,
            flops_fwd: r.flops_fwd,
        })
        .collect()
}

fn seed_masks(trace: &MetricsTrace, seed: u64) -> Option<SeedMasks> {
    let stats = trace.final_masks.as_ref()?;
    let layers = stats
        .per_layer_sparsity
        .iter()
        .enumerate()
        .flat_map(|(agent_id, per)| {
            per.iter().enumerate().map(move |(layer, &sparsity)| LayerSparsity {
                agent_id,
                layer,
                sparsity,
            })
        })
        .collect();
    Some(SeedMasks {
        seed,
        layers,
        hamming: stats.pairwise_hamming.clone(),
    })
}

/// Trains every seed of `cfg` and writes the run directory. Seeds run on up
/// to `opts.workers` threads; one aggregator writes their rows in seed-list
/// order, so the output does not depend on scheduling.
pub fn run_experiment(cfg: &RunConfig, opts: RunOptions) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    let metrics_path = out.join(METRICS_FILE);
    if !opts.force && (metrics_path.exists() || out.join(RESOLVED_FILE).exists()) {
        return Err(HarnessError::Exists(out));
    }
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let resolved = out.join(RESOLVED_FILE);
    fs::write(&resolved, cfg.to_cfg_string()).map_err(io_err(&resolved))?;

    let file = fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    writer.write_record(METRICS_HEADER)?;

    let seeds = cfg.seeds.clone();
    let scheme = cfg.scheme.to_string();
    let workers = opts.workers.clamp(1, seeds.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<MetricsTrace, TrainError>)>();

    let mut rows_written = 0;
    let mut final_returns = Vec::new();
    let mut masks = Vec::new();
    let mut failure: Option<HarnessError> = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let seeds = &seeds;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let result = trainers::train(cfg, seeds[i]);
                let failed = result.is_err();
                if tx.send((i, result)).is_err() || failed {
                    // stop handing out seeds once anything went wrong
                    next.store(seeds.len(), Ordering::SeqCst);
                    break;
                }
            });
        }
        drop(tx);
        let mut pending: BTreeMap<usize, MetricsTrace> = BTreeMap::new();
        let mut cursor = 0;
        for (i, result) in rx {
            match result {
                Ok(trace) => {
                    pending.insert(i, trace);
                }
                Err(e) => {
                    failure.get_or_insert(HarnessError::Train { seed: seeds[i], source: e });
                    continue;
                }
            }
            while let Some(trace) = pending.remove(&cursor) {
                let seed = seeds[cursor];
                if failure.is_none() {
                    for row in trace_rows(&trace, seed, &scheme) {
                        if let Err(e) = writer.serialize(&row) {
                            failure = Some(e.into());
                            break;
                        }
                        rows_written += 1;
                    }
                }
                final_returns.push((seed, trace.final_eval_return()));
                if let Some(m) = seed_masks(&trace, seed) {
                    masks.push(m);
                }
                cursor += 1;
            }
        }
    });
    writer.flush().map_err(io_err(&metrics_path))?;
    if let Some(e) = failure {
        return Err(e);
    }
    let masks_path = out.join(MASKS_FILE);
    let json = serde_json::to_string_pretty(&MasksFile {
        scheme: scheme.clone(),
        seeds: masks,
    })?;
    fs::write(&masks_path, json).map_err(io_err(&masks_path))?;
    Ok(RunSummary {
        out_dir: out,
        rows: rows_written,
        final_returns,
    })
}

/// Reads a `metrics.csv` back.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(HarnessError::BadMetrics(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(HarnessError::from))
        .collect()
}
