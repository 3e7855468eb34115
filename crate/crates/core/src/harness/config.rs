//! Run configuration: a line-based `key = value` format with `[section]` headers.
//!
//! Unknown keys and malformed values are errors. Keys left out take the
//! documented defaults, several of which depend on the environment and the
//! trainer (see [`RunConfig::resolve`]). [`RunConfig::to_cfg_string`] writes
//! every resolved value back in the same format, and parsing that output
//! yields the same configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::env::EnvName;
use crate::masking::MaskMode;
use crate::trainers::{Scheme, TrainerKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: unknown section [{section}]")]
    UnknownSection { line: usize, section: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("{key}: cannot parse {value:?} as {expected}")]
    Type {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("{key} = {value} is out of range ({rule})")]
    Range {
        key: String,
        value: String,
        rule: &'static str,
    },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F64,
    /// Parameters are rounded to single precision after every optimizer step.
    F32,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        })
    }
}

impl FromStr for Precision {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "f64" => Ok(Precision::F64),
            "f32" => Ok(Precision::F32),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matd3Config {
    pub gamma: f64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub exploration_noise: f64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: u64,
    pub ensemble_size: usize,
    pub tau: f64,
}

impl Default for Matd3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            critic_lr: 1e-3,
            actor_lr: 5e-4,
            exploration_noise: 0.1,
            target_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            ensemble_size: 5,
            tau: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QmixConfig {
    pub gamma: f64,
    pub lr: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_anneal_steps: u64,
    pub double_q: bool,
    pub target_update_interval: u64,
    pub mixer_embed: usize,
}

impl Default for QmixConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 5e-4,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_anneal_steps: 50_000,
            double_q: true,
            target_update_interval: 200,
            mixer_embed: 32,
        }
    }
}

/// Reset interval as written in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interval {
    /// Reference interval shrunk in proportion to `total_steps`.
    Auto,
    Never,
    Every(u64),
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interval::Auto => f.write_str("auto"),
            Interval::Never => f.write_str("none"),
            Interval::Every(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Interval {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "auto" => Ok(Interval::Auto),
            "none" | "0" => Ok(Interval::Never),
            n => n.parse::<u64>().map(Interval::Every).map_err(|_| ()),
        }
    }
}

impl Interval {
    pub fn steps(self) -> Option<u64> {
        match self {
            Interval::Every(n) => Some(n),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskingSection {
    pub mode: MaskMode,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub actor_reset_interval: Interval,
    pub critic_reset_interval: Interval,
    pub layer_weight_base: f64,
    pub threshold_init: f64,
    pub fixed_keep_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvName,
    pub trainer: TrainerKind,
    pub scheme: Scheme,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub precision: Precision,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub warmup_steps: u64,
    pub train_every: u64,
    pub hidden_sizes: Vec<usize>,
    pub critic_hidden_sizes: Vec<usize>,
    pub matd3: Matd3Config,
    pub qmix: QmixConfig,
    pub masking: MaskingSection,
}

/// Reference `(reset interval, total steps)` pairs used to scale `auto` intervals.
const QMIX_ACTOR_RESET: (f64, f64) = (200e3, 2e6);
const MATD3_ACTOR_RESET: (f64, f64) = (1e6, 10e6);
const MATD3_CRITIC_RESET: (f64, f64) = (800e3, 10e6);

impl Default for RunConfig {
    fn default() -> Self {
        Self::defaults_for(EnvName::HeteroSpread, None)
    }
}

impl RunConfig {
    /// Defaults for an environment, optionally with an explicit trainer.
    pub fn defaults_for(env: EnvName, trainer: Option<TrainerKind>) -> Self {
        let trainer = trainer.unwrap_or(match env {
            EnvName::HeteroSpread => TrainerKind::Qmix,
            EnvName::HeteroReach => TrainerKind::Matd3,
        });
        let (beta, rho) = match trainer {
            TrainerKind::Qmix => (0.5, 0.1),
            TrainerKind::Matd3 => (0.1, 0.5),
        };
        let (total_steps, hidden) = match trainer {
            TrainerKind::Qmix => (200_000, vec![64, 64]),
            TrainerKind::Matd3 => (100_000, vec![256, 256]),
        };
        Self {
            env,
            trainer,
            scheme: Scheme::Kaleidoscope,
            seeds: vec![0],
            out_dir: PathBuf::from("runs/default"),
            precision: Precision::F64,
            total_steps,
            eval_interval: 5_000,
            eval_episodes: 32,
            batch_size: 128,
            buffer_size: 50_000,
            warmup_steps: 1_000,
            train_every: match trainer {
                TrainerKind::Qmix => 8,
                TrainerKind::Matd3 => 1,
            },
            critic_hidden_sizes: hidden.clone(),
            hidden_sizes: hidden,
            matd3: Matd3Config::default(),
            qmix: QmixConfig::default(),
            masking: MaskingSection {
                mode: MaskMode::Soft,
                alpha: 0.1,
                beta,
                rho,
                actor_reset_interval: Interval::Auto,
                critic_reset_interval: Interval::Auto,
                layer_weight_base: 2.0,
                threshold_init: -5.0,
                fixed_keep_prob: 0.9,
            },
        }
    }

    /// Actor reset interval after `auto` scaling; `None` when disabled.
    pub fn actor_reset_steps(&self) -> Option<u64> {
        let scale = match self.trainer {
            TrainerKind::Qmix => QMIX_ACTOR_RESET,
            TrainerKind::Matd3 => MATD3_ACTOR_RESET,
        };
        resolve_interval(self.masking.actor_reset_interval, scale, self.total_steps)
    }

    /// Critic reset interval after `auto` scaling (MATD3 only).
    pub fn critic_reset_steps(&self) -> Option<u64> {
        match self.trainer {
            TrainerKind::Qmix => None,
            TrainerKind::Matd3 => {
                resolve_interval(self.masking.critic_reset_interval, MATD3_CRITIC_RESET, self.total_steps)
            }
        }
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let entries = tokenize(text)?;
        let get = |k: &str| entries.get(k).map(|(_, v)| v.as_str());
        let env = match get("env") {
            Some(v) => parse_val::<EnvName>("env", v, "an environment name")?,
            None => EnvName::HeteroSpread,
        };
        let trainer = get("trainer")
            .map(|v| parse_val::<TrainerKind>("trainer", v, "matd3 or qmix"))
            .transpose()?;
        let mut cfg = Self::defaults_for(env, trainer);
        for (key, (_, value)) in &entries {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "env" | "trainer" => {}
            "scheme" => self.scheme = parse_val(key, v, "a scheme name")?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "precision" => self.precision = parse_val(key, v, "f64 or f32")?,
            "total_steps" => self.total_steps = parse_val(key, v, "an integer")?,
            "eval_interval" => self.eval_interval = parse_val(key, v, "an integer")?,
            "eval_episodes" => self.eval_episodes = parse_val(key, v, "an integer")?,
            "batch_size" => self.batch_size = parse_val(key, v, "an integer")?,
            "buffer_size" => self.buffer_size = parse_val(key, v, "an integer")?,
            "warmup_steps" => self.warmup_steps = parse_val(key, v, "an integer")?,
            "train_every" => self.train_every = parse_val(key, v, "an integer")?,
            "hidden_sizes" => self.hidden_sizes = parse_list(key, v)?,
            "critic_hidden_sizes" => self.critic_hidden_sizes = parse_list(key, v)?,
            "matd3.gamma" => self.matd3.gamma = parse_val(key, v, "a number")?,
            "matd3.critic_lr" => self.matd3.critic_lr = parse_val(key, v, "a number")?,
            "matd3.actor_lr" => self.matd3.actor_lr = parse_val(key, v, "a number")?,
            "matd3.exploration_noise" => self.matd3.exploration_noise = parse_val(key, v, "a number")?,
            "matd3.target_noise" => self.matd3.target_noise = parse_val(key, v, "a number")?,
            "matd3.noise_clip" => self.matd3.noise_clip = parse_val(key, v, "a number")?,
            "matd3.policy_delay" => self.matd3.policy_delay = parse_val(key, v, "an integer")?,
            "matd3.ensemble_size" => self.matd3.ensemble_size = parse_val(key, v, "an integer")?,
            "matd3.tau" => self.matd3.tau = parse_val(key, v, "a number")?,
            "qmix.gamma" => self.qmix.gamma = parse_val(key, v, "a number")?,
            "qmix.lr" => self.qmix.lr = parse_val(key, v, "a number")?,
            "qmix.eps_start" => self.qmix.eps_start = parse_val(key, v, "a number")?,
            "qmix.eps_end" => self.qmix.eps_end = parse_val(key, v, "a number")?,
            "qmix.eps_anneal_steps" => self.qmix.eps_anneal_steps = parse_val(key, v, "an integer")?,
            "qmix.double_q" => self.qmix.double_q = parse_val(key, v, "true or false")?,
            "qmix.target_update_interval" => {
                self.qmix.target_update_interval = parse_val(key, v, "an integer")?
            }
            "qmix.mixer_embed" => self.qmix.mixer_embed = parse_val(key, v, "an integer")?,
            "masking.mode" => {
                self.masking.mode = match v {
                    "soft" => MaskMode::Soft,
                    "hard" => MaskMode::Hard,
                    _ => return Err(type_err(key, v, "soft or hard")),
                }
            }
            "masking.alpha" => self.masking.alpha = parse_val(key, v, "a number")?,
            "masking.beta" => self.masking.beta = parse_val(key, v, "a number")?,
            "masking.rho" => self.masking.rho = parse_val(key, v, "a number")?,
            "masking.actor_reset_interval" => {
                self.masking.actor_reset_interval = parse_val(key, v, "auto, none or an integer")?
            }
            "masking.critic_reset_interval" => {
                self.masking.critic_reset_interval = parse_val(key, v, "auto, none or an integer")?
            }
            "masking.layer_weight_base" => self.masking.layer_weight_base = parse_val(key, v, "a number")?,
            "masking.threshold_init" => self.masking.threshold_init = parse_val(key, v, "a number")?,
            "masking.fixed_keep_prob" => self.masking.fixed_keep_prob = parse_val(key, v, "a number")?,
            _ => unreachable!("keys are checked by tokenize"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let range = |key: &str, value: String, rule: &'static str| ConfigError::Range {
            key: key.to_string(),
            value,
            rule,
        };
        for (key, g) in [("matd3.gamma", self.matd3.gamma), ("qmix.gamma", self.qmix.gamma)] {
            if !(g > 0.0 && g <= 1.0) {
                return Err(range(key, g.to_string(), "0 < gamma <= 1"));
            }
        }
        if self.qmix.eps_end > self.qmix.eps_start {
            return Err(range("qmix.eps_end", self.qmix.eps_end.to_string(), "eps_end <= eps_start"));
        }
        for (key, p) in [
            ("qmix.eps_start", self.qmix.eps_start),
            ("qmix.eps_end", self.qmix.eps_end),
            ("masking.rho", self.masking.rho),
            ("masking.fixed_keep_prob", self.masking.fixed_keep_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(range(key, p.to_string(), "must lie in [0, 1]"));
            }
        }
        for (key, x) in [("masking.alpha", self.masking.alpha), ("masking.beta", self.masking.beta)] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(range(key, x.to_string(), "must be >= 0"));
            }
        }
        if self.matd3.ensemble_size < 1 {
            return Err(range("matd3.ensemble_size", "0".into(), "K >= 1"));
        }
        if !(0.0..=1.0).contains(&self.matd3.tau) {
            return Err(range("matd3.tau", self.matd3.tau.to_string(), "must lie in [0, 1]"));
        }
        for (key, n) in [
            ("batch_size", self.batch_size as u64),
            ("buffer_size", self.buffer_size as u64),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes as u64),
            ("train_every", self.train_every),
            ("matd3.policy_delay", self.matd3.policy_delay),
            ("qmix.target_update_interval", self.qmix.target_update_interval),
            ("qmix.mixer_embed", self.qmix.mixer_embed as u64),
        ] {
            if n == 0 {
                return Err(range(key, "0".into(), "must be positive"));
            }
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(range("hidden_sizes", format!("{:?}", self.hidden_sizes), "positive widths"));
        }
        if self.critic_hidden_sizes.is_empty() || self.critic_hidden_sizes.contains(&0) {
            return Err(range(
                "critic_hidden_sizes",
                format!("{:?}", self.critic_hidden_sizes),
                "positive widths",
            ));
        }
        if self.seeds.is_empty() {
            return Err(range("seeds", String::new(), "at least one seed"));
        }
        let expected = match self.env {
            EnvName::HeteroSpread => TrainerKind::Qmix,
            EnvName::HeteroReach => TrainerKind::Matd3,
        };
        if self.trainer != expected {
            return Err(range(
                "trainer",
                self.trainer.to_string(),
                "hetero_spread is discrete (qmix), hetero_reach is continuous (matd3)",
            ));
        }
        Ok(())
    }

    /// Every resolved value in the config file format.
    pub fn to_cfg_string(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let seeds = self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let mode = match self.masking.mode {
            MaskMode::Soft => "soft",
            MaskMode::Hard => "hard",
        };
        let m = &self.matd3;
        let q = &self.qmix;
        let k = &self.masking;
        format!(
            "env = {}\ntrainer = {}\nscheme = {}\nseeds = {}\nout_dir = {}\nprecision = {}\n\
total_steps = {}\neval_interval = {}\neval_episodes = {}\nbatch_size = {}\nbuffer_size = {}\n\
warmup_steps = {}\ntrain_every = {}\nhidden_sizes = {}\ncritic_hidden_sizes = {}\n\
\n[matd3]\ngamma = {}\ncritic_lr = {}\nactor_lr = {}\nexploration_noise = {}\ntarget_noise = {}\n\
noise_clip = {}\npolicy_delay = {}\nensemble_size = {}\ntau = {}\n\
\n[qmix]\ngamma = {}\nlr = {}\neps_start = {}\neps_end = {}\neps_anneal_steps = {}\ndouble_q = {}\n\
target_update_interval = {}\nmixer_embed = {}\n\
\n[masking]\nmode = {}\nalpha = {}\nbeta = {}\nrho = {}\nactor_reset_interval = {}\n\
critic_reset_interval = {}\nlayer_weight_base = {}\nthreshold_init = {}\nfixed_keep_prob = {}\n",
            self.env,
            self.trainer,
            self.scheme,
            seeds,
            self.out_dir.display(),
            self.precision,
            self.total_steps,
            self.eval_interval,
            self.eval_episodes,
            self.batch_size,
            self.buffer_size,
            self.warmup_steps,
            self.train_every,
            join(&self.hidden_sizes),
            join(&self.critic_hidden_sizes),
            m.gamma,
            m.critic_lr,
            m.actor_lr,
            m.exploration_noise,
            m.target_noise,
            m.noise_clip,
            m.policy_delay,
            m.ensemble_size,
            m.tau,
            q.gamma,
            q.lr,
            q.eps_start,
            q.eps_end,
            q.eps_anneal_steps,
            q.double_q,
            q.target_update_interval,
            q.mixer_embed,
            mode,
            k.alpha,
            k.beta,
            k.rho,
            match self.actor_reset_steps() {
                Some(n) => Interval::Every(n),
                None => Interval::Never,
            },
            match self.critic_reset_steps() {
                Some(n) => Interval::Every(n),
                None => Interval::Never,
            },
            k.layer_weight_base,
            k.threshold_init,
            k.fixed_keep_prob,
        )
    }
}

fn resolve_interval(interval: Interval, (ref_interval, ref_total): (f64, f64), total: u64) -> Option<u64> {
    match interval {
        Interval::Never => None,
        Interval::Every(n) => Some(n),
        Interval::Auto => {
            let n = (ref_interval * total as f64 / ref_total).round() as u64;
            (n > 0).then_some(n)
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "env",
    "trainer",
    "scheme",
    "seeds",
    "out_dir",
    "precision",
    "total_steps",
    "eval_interval",
    "eval_episodes",
    "batch_size",
    "buffer_size",
    "warmup_steps",
    "train_every",
    "hidden_sizes",
    "critic_hidden_sizes",
];
const MATD3_KEYS: &[&str] = &[
    "gamma",
    "critic_lr",
    "actor_lr",
    "exploration_noise",
    "target_noise",
    "noise_clip",
    "policy_delay",
    "ensemble_size",
    "tau",
];
const QMIX_KEYS: &[&str] = &[
    "gamma",
    "lr",
    "eps_start",
    "eps_end",
    "eps_anneal_steps",
    "double_q",
    "target_update_interval",
    "mixer_embed",
];
const MASKING_KEYS: &[&str] = &[
    "mode",
    "alpha",
    "beta",
    "rho",
    "actor_reset_interval",
    "critic_reset_interval",
    "layer_weight_base",
    "threshold_init",
    "fixed_keep_prob",
];

/// Splits a config text into `section.key -> (line, value)`.
fn tokenize(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or(ConfigError::Syntax { line: line_no })?
                .trim();
            if !matches!(name, "matd3" | "qmix" | "masking") {
                return Err(ConfigError::UnknownSection {
                    line: line_no,
                    section: name.to_string(),
                });
            }
            section = name.to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: line_no })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: line_no });
        }
        let allowed = match section.as_str() {
            "" => TOP_KEYS,
            "matd3" => MATD3_KEYS,
            "qmix" => QMIX_KEYS,
            _ => MASKING_KEYS,
        };
        if !allowed.contains(&k) {
            return Err(ConfigError::UnknownKey {
                line: line_no,
                key: if section.is_empty() {
                    k.to_string()
                } else {
                    format!("{section}.{k}")
                },
            });
        }
        let full = if section.is_empty() {
            k.to_string()
        } else {
            format!("{section}.{k}")
        };
        if out.insert(full.clone(), (line_no, v.to_string())).is_some() {
            return Err(ConfigError::Duplicate { line: line_no, key: full });
        }
    }
    Ok(out)
}

fn type_err(key: &str, value: &str, expected: &'static str) -> ConfigError {
    ConfigError::Type {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    }
}

fn parse_val<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T> {
    value.parse::<T>().map_err(|_| type_err(key, value, expected))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| parse_val(key, s.trim(), "a comma-separated list of integers"))
        .collect()
}

/// Parses a comma-separated seed list (CLI flag and `KALEIDO_SEED`).
pub fn parse_seed_list(value: &str) -> Result<Vec<u64>> {
    parse_list("seeds", value)
}
