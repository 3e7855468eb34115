//! Per-scheme summary of finished run directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::config::RunConfig;
use super::flops::flops_fc;
use super::run::{read_metrics, MetricsRow, METRICS_FILE, RESOLVED_FILE};
use super::HarnessError;
use crate::env::{Env, EnvName, Environment};

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSummary {
    pub scheme: String,
    pub seeds: usize,
    pub mean_return: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean final forward FLOPs over the dense shared-with-id network.
    pub normalized_flops: f64,
    /// Set when the interval rests on a single seed.
    pub single_seed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub env: EnvName,
    pub schemes: Vec<SchemeSummary>,
}

/// Mean and two-sided 95% Student-t interval. With one value the interval
/// collapses to the point.
pub fn mean_ci95(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, mean, mean);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    let half = t * (var / n as f64).sqrt();
    (mean, mean - half, mean + half)
}

/// Dense forward FLOPs of one agent's network when all agents share it with
/// a one-hot id appended to the input.
pub fn dense_reference_flops(cfg: &RunConfig) -> u64 {
    let env = Env::new(cfg.env);
    let spec = env.spec();
    let out = match spec.action_space {
        crate::env::ActionSpace::Discrete(n) => n,
        crate::env::ActionSpace::Continuous(d) => d,
    };
    let mut dims = vec![spec.obs_dim + spec.n_agents];
    dims.extend_from_slice(&cfg.hidden_sizes);
    dims.push(out);
    dims.windows(2)
        .map(|w| flops_fc(w[0], w[1], 0.0).expect("zero sparsity"))
        .sum()
}

fn final_eval(rows: &[MetricsRow]) -> BTreeMap<u64, &MetricsRow> {
    let mut last: BTreeMap<u64, &MetricsRow> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.split == "eval") {
        match last.get(&r.seed) {
            Some(prev) if prev.step >= r.step => {}
            _ => {
                last.insert(r.seed, r);
            }
        }
    }
    last
}

pub fn compare(dirs: &[PathBuf]) -> Result<CompareReport, HarnessError> {
    if dirs.is_empty() {
        return Err(HarnessError::BadMetrics("no run directories given".into()));
    }
    let mut env: Option<EnvName> = None;
    // scheme -> (final returns, final flops ratios)
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for dir in dirs {
        let cfg = RunConfig::parse_file(&dir.join(RESOLVED_FILE))?;
        match env {
            None => env = Some(cfg.env),
            Some(e) if e != cfg.env => {
                return Err(HarnessError::MismatchedEnvs {
                    first: e.to_string(),
                    other: cfg.env.to_string(),
                    dir: dir.clone(),
                })
            }
            Some(_) => {}
        }
        let reference = dense_reference_flops(&cfg) as f64;
        let rows = read_metrics(&dir.join(METRICS_FILE))?;
        let finals = final_eval(&rows);
        if finals.is_empty() {
            return Err(HarnessError::NoRuns(dir.clone()));
        }
        for row in finals.values() {
            let entry = groups.entry(row.scheme.clone()).or_default();
            entry.0.push(row.ret);
            entry.1.push(row.flops_fwd as f64 / reference);
        }
    }
    let schemes = groups
        .into_iter()
        .map(|(scheme, (returns, flops))| {
            let (mean_return, ci_low, ci_high) = mean_ci95(&returns);
            SchemeSummary {
                scheme,
                seeds: returns.len(),
                mean_return,
                ci_low,
                ci_high,
                normalized_flops: flops.iter().sum::<f64>() / flops.len() as f64,
                single_seed: returns.len() == 1,
            }
        })
        .collect();
    Ok(CompareReport {
        env: env.expect("at least one directory"),
        schemes,
    })
}

impl CompareReport {
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "scheme",
            "seeds",
            "mean_return",
            "ci_low",
            "ci_high",
            "normalized_flops",
            "single_seed",
        ])?;
        for s in &self.schemes {
            w.write_record([
                s.scheme.clone(),
                s.seeds.to_string(),
                s.mean_return.to_string(),
                s.ci_low.to_string(),
                s.ci_high.to_string(),
                s.normalized_flops.to_string(),
                s.single_seed.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::BadMetrics(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_text(&self) -> String {
        let width = self.schemes.iter().map(|s| s.scheme.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "env: {}", self.env);
        let _ = writeln!(
            out,
            "{:<width$}  {:>5}  {:>10}  {:>23}  {:>9}",
            "scheme", "seeds", "return", "95% ci", "flops"
        );
        for s in &self.schemes {
            let ci = format!("[{:.3}, {:.3}]", s.ci_low, s.ci_high);
            let _ = writeln!(
                out,
                "{:<width$}  {:>5}  {:>10.3}  {:>23}  {:>9.3}{}",
                s.scheme,
                s.seeds,
                s.mean_return,
                ci,
                s.normalized_flops,
                if s.single_seed { "  (single seed: no interval)" } else { "" }
            );
        }
        out
    }

    pub fn warnings(&self) -> Vec<String> {
        self.schemes
            .iter()
            .filter(|s| s.single_seed)
            .map(|s| format!("{}: only one seed, the confidence interval is the point estimate", s.scheme))
            .collect()
    }
}
