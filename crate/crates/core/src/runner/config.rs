//! TOML experiment configuration: single cells, full matrices and sparse cell lists.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::{A2cConfig, Algorithm, DqnConfig, PpoConfig};
use crate::envs::{EnvKind, EnvOptions};
use crate::metrics::CurveIndexing;
use crate::tutor::{ScriptPolicy, DEFAULT_BUDGET, DEFAULT_RETRY_CAP, DEFAULT_SCRIPTED_LATENCY};

pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];
pub const DEFAULT_SMOOTHING_WINDOW: usize = 7;

/// Training length and decay horizon for an environment.
pub fn default_steps(environment: EnvKind) -> (u64, u64) {
    match environment {
        EnvKind::Blackjack => (15000, 3000),
        EnvKind::ConnectFour => (10000, 1000),
        EnvKind::Snake => (8000, 1000),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { field: field.into(), message: message.into() }
}

/// Where tutor advice comes from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TutorSpec {
    None,
    Scripted(ScriptPolicy),
    Http { model: String },
}

impl TutorSpec {
    pub fn is_none(&self) -> bool {
        matches!(self, TutorSpec::None)
    }

    /// Name used to look up a tutor's parameter count: the model or policy name.
    pub fn model_name(&self) -> &str {
        match self {
            TutorSpec::None => "none",
            TutorSpec::Scripted(policy) => policy.as_str(),
            TutorSpec::Http { model } => model,
        }
    }
}

impl fmt::Display for TutorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TutorSpec::None => f.write_str("none"),
            TutorSpec::Scripted(policy) => write!(f, "scripted:{policy}"),
            TutorSpec::Http { model } => write!(f, "http:{model}"),
        }
    }
}

impl FromStr for TutorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "none" {
            return Ok(TutorSpec::None);
        }
        match s.split_once(':') {
            Some(("scripted", policy)) => policy.parse().map(TutorSpec::Scripted),
            Some(("http", model)) if !model.is_empty() => Ok(TutorSpec::Http { model: model.to_string() }),
            _ => Err(format!("unknown tutor `{s}`; expected none, scripted:<policy> or http:<model>")),
        }
    }
}

impl TryFrom<String> for TutorSpec {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<TutorSpec> for String {
    fn from(value: TutorSpec) -> Self {
        value.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TutorOptions {
    pub p_initial: f64,
    pub p_final: f64,
    pub budget: u32,
    pub retry_cap: u32,
    /// Simulated seconds per scripted query.
    pub latency_seconds: f64,
    /// Fraction of scripted replies that are garbled.
    pub malformed_rate: f64,
    /// HTTP backend base URL; the environment variable still takes precedence.
    pub base_url: Option<String>,
    pub timeout_seconds: f64,
}

impl Default for TutorOptions {
    fn default() -> Self {
        Self {
            p_initial: 1.0,
            p_final: 0.1,
            budget: DEFAULT_BUDGET,
            retry_cap: DEFAULT_RETRY_CAP,
            latency_seconds: DEFAULT_SCRIPTED_LATENCY,
            malformed_rate: 0.0,
            base_url: None,
            timeout_seconds: 120.0,
        }
    }
}

/// One cell of the experiment matrix with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvKind,
    pub algorithm: Algorithm,
    pub tutor: TutorSpec,
    /// `None` for cells without a tutor.
    pub reuse: Option<bool>,
    pub total_steps: u64,
    pub decay_steps: u64,
    pub seeds: Vec<u64>,
    pub curve_indexing: CurveIndexing,
    pub smoothing_window: usize,
    pub tutor_options: TutorOptions,
    pub dqn: DqnConfig,
    pub ppo: PpoConfig,
    pub a2c: A2cConfig,
    pub env: EnvOptions,
}

impl ExperimentConfig {
    /// Defaults for one environment: DQN, no tutor.
    pub fn new(environment: EnvKind) -> Self {
        let (total_steps, decay_steps) = default_steps(environment);
        Self {
            environment,
            algorithm: Algorithm::Dqn,
            tutor: TutorSpec::None,
            reuse: None,
            total_steps,
            decay_steps,
            seeds: DEFAULT_SEEDS.to_vec(),
            curve_indexing: CurveIndexing::Episode,
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
            tutor_options: TutorOptions::default(),
            dqn: DqnConfig { epsilon_decay_steps: decay_steps, ..DqnConfig::default() },
            ppo: PpoConfig::default(),
            a2c: A2cConfig::default(),
            env: EnvOptions::default(),
        }
    }

    pub fn reuse_label(&self) -> &'static str {
        match self.reuse {
            None => "n/a",
            Some(true) => "true",
            Some(false) => "false",
        }
    }

    fn cell_key(&self) -> (EnvKind, Algorithm, TutorSpec, Option<bool>) {
        (self.environment, self.algorithm, self.tutor.clone(), self.reuse)
    }
}

/// A loaded configuration file.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigFile {
    pub cells: Vec<ExperimentConfig>,
    /// Whether the file described a matrix rather than a single cell.
    pub matrix: bool,
    /// Tutor parameter counts in billions, keyed by model or tutor name.
    pub tutor_sizes: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    environment: Option<EnvKind>,
    algorithm: Option<Algorithm>,
    tutor: Option<TutorSpec>,
    reuse: Option<bool>,
    total_steps: Option<u64>,
    decay_steps: Option<u64>,
    seeds: Option<Vec<u64>>,
    curve_indexing: Option<CurveIndexing>,
    smoothing_window: Option<usize>,
    #[serde(default)]
    tutor_options: TutorOptions,
    #[serde(default)]
    dqn: DqnConfig,
    #[serde(default)]
    ppo: PpoConfig,
    #[serde(default)]
    a2c: A2cConfig,
    #[serde(default)]
    env: EnvOptions,
    #[serde(default)]
    tutor_sizes: BTreeMap<String, f64>,
    matrix: Option<RawMatrix>,
    #[serde(default)]
    cells: Vec<RawCell>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrix {
    environments: Vec<EnvKind>,
    algorithms: Vec<Algorithm>,
    #[serde(default = "default_tutors")]
    tutors: Vec<TutorSpec>,
    #[serde(default = "default_reuse")]
    reuse: Vec<bool>,
}

fn default_tutors() -> Vec<TutorSpec> {
    vec![TutorSpec::None]
}

fn default_reuse() -> Vec<bool> {
    vec![true]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCell {
    environment: EnvKind,
    algorithm: Algorithm,
    #[serde(default = "tutor_none")]
    tutor: TutorSpec,
    reuse: Option<bool>,
    total_steps: Option<u64>,
    decay_steps: Option<u64>,
    seeds: Option<Vec<u64>>,
}

fn tutor_none() -> TutorSpec {
    TutorSpec::None
}

/// Keys that hold counts; a negative value is a validation error, not a type error.
const COUNT_KEYS: [&str; 17] = [
    "total_steps",
    "decay_steps",
    "seeds",
    "smoothing_window",
    "budget",
    "retry_cap",
    "buffer_capacity",
    "batch_size",
    "target_sync_interval",
    "epsilon_decay_steps",
    "n_steps",
    "n_epochs",
    "hidden",
    "initial_length",
    "max_steps_without_food",
    "dealer_stands_on",
    "parallel",
];

fn check_counts(table: &toml::Table, prefix: &str) -> Result<(), ConfigError> {
    for (key, value) in table {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match value {
            toml::Value::Table(inner) => check_counts(inner, &path)?,
            toml::Value::Array(items) => {
                for (i, item) in items.iter().enumerate() {
                    let item_path = format!("{path}[{i}]");
                    match item {
                        toml::Value::Table(inner) => check_counts(inner, &item_path)?,
                        toml::Value::Integer(n) if *n < 0 && COUNT_KEYS.contains(&key.as_str()) => {
                            return Err(invalid(item_path, format!("must be non-negative, got {n}")));
                        }
                        _ => {}
                    }
                }
            }
            toml::Value::Integer(n) if *n < 0 && COUNT_KEYS.contains(&key.as_str()) => {
                return Err(invalid(path, format!("must be non-negative, got {n}")));
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<ConfigFile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ConfigFile, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    check_counts(&table, "")?;
    let epsilon_decay_explicit = table.get("dqn").and_then(|d| d.get("epsilon_decay_steps")).is_some();
    let raw: RawFile = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    build(raw, epsilon_decay_explicit)
}

fn build(raw: RawFile, epsilon_decay_explicit: bool) -> Result<ConfigFile, ConfigError> {
    let is_matrix = raw.matrix.is_some() || !raw.cells.is_empty();
    let base = |environment: EnvKind| {
        let (steps, theta) = default_steps(environment);
        let mut cell = ExperimentConfig::new(environment);
        cell.total_steps = raw.total_steps.unwrap_or(steps);
        cell.decay_steps = raw.decay_steps.unwrap_or(theta);
        if let Some(seeds) = &raw.seeds {
            cell.seeds = seeds.clone();
        }
        cell.curve_indexing = raw.curve_indexing.unwrap_or_default();
        cell.smoothing_window = raw.smoothing_window.unwrap_or(DEFAULT_SMOOTHING_WINDOW);
        cell.tutor_options = raw.tutor_options.clone();
        cell.dqn = raw.dqn.clone();
        cell.ppo = raw.ppo.clone();
        cell.a2c = raw.a2c.clone();
        cell.env = raw.env.clone();
        cell
    };
    let finish = |mut cell: ExperimentConfig, tutor: TutorSpec, reuse: Option<bool>| {
        cell.reuse = if tutor.is_none() { None } else { Some(reuse.unwrap_or(true)) };
        cell.tutor = tutor;
        if !epsilon_decay_explicit {
            cell.dqn.epsilon_decay_steps = cell.decay_steps;
        }
        cell
    };

    let mut cells = Vec::new();
    if is_matrix {
        for field in ["environment", "algorithm", "tutor", "reuse"] {
            let present = match field {
                "environment" => raw.environment.is_some(),
                "algorithm" => raw.algorithm.is_some(),
                "tutor" => raw.tutor.is_some(),
                _ => raw.reuse.is_some(),
            };
            if present {
                return Err(invalid(field, "set per cell or under [matrix] in a matrix file"));
            }
        }
        if let Some(matrix) = &raw.matrix {
            for (name, len) in [
                ("matrix.environments", matrix.environments.len()),
                ("matrix.algorithms", matrix.algorithms.len()),
                ("matrix.tutors", matrix.tutors.len()),
                ("matrix.reuse", matrix.reuse.len()),
            ] {
                if len == 0 {
                    return Err(invalid(name, "must not be empty"));
                }
            }
            for &environment in &matrix.environments {
                for &algorithm in &matrix.algorithms {
                    for tutor in &matrix.tutors {
                        for &reuse in &matrix.reuse {
                            let mut cell = base(environment);
                            cell.algorithm = algorithm;
                            cells.push(finish(cell, tutor.clone(), Some(reuse)));
                        }
                    }
                }
            }
        }
        for entry in &raw.cells {
            let mut cell = base(entry.environment);
            cell.algorithm = entry.algorithm;
            if let Some(steps) = entry.total_steps {
                cell.total_steps = steps;
            }
            if let Some(theta) = entry.decay_steps {
                cell.decay_steps = theta;
            }
            if let Some(seeds) = &entry.seeds {
                cell.seeds = seeds.clone();
            }
            cells.push(finish(cell, entry.tutor.clone(), entry.reuse));
        }
    } else {
        let environment = raw.environment.ok_or_else(|| invalid("environment", "required"))?;
        let mut cell = base(environment);
        cell.algorithm = raw.algorithm.unwrap_or(Algorithm::Dqn);
        cells.push(finish(cell, raw.tutor.clone().unwrap_or(TutorSpec::None), raw.reuse));
    }

    let mut seen = std::collections::HashSet::new();
    cells.retain(|cell| seen.insert(cell.cell_key()));

    for (i, cell) in cells.iter().enumerate() {
        let prefix = if is_matrix { format!("cells[{i}].") } else { String::new() };
        validate(cell, &prefix)?;
    }
    for (name, &size) in &raw.tutor_sizes {
        if !(size.is_finite() && size > 0.0) {
            return Err(invalid(format!("tutor_sizes.{name}"), "must be a positive number"));
        }
    }
    Ok(ConfigFile { cells, matrix: is_matrix, tutor_sizes: raw.tutor_sizes })
}

fn check(ok: bool, field: String, message: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(field, message))
    }
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// Bound checks on a fully populated cell. `prefix` locates the cell in the file.
pub fn validate(cell: &ExperimentConfig, prefix: &str) -> Result<(), ConfigError> {
    let f = |name: &str| format!("{prefix}{name}");
    check(cell.total_steps > 0, f("total_steps"), "must be at least 1")?;
    check(cell.decay_steps > 0, f("decay_steps"), "must be at least 1")?;
    check(!cell.seeds.is_empty(), f("seeds"), "must list at least one seed")?;
    let mut sorted = cell.seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    check(sorted.len() == cell.seeds.len(), f("seeds"), "must not repeat")?;
    check(cell.smoothing_window % 2 == 1, f("smoothing_window"), "must be odd and at least 1")?;

    let t = &cell.tutor_options;
    check(in_unit(t.p_initial), f("tutor_options.p_initial"), "must lie in [0, 1]")?;
    check(in_unit(t.p_final), f("tutor_options.p_final"), "must lie in [0, 1]")?;
    check(t.p_final <= t.p_initial, f("tutor_options.p_final"), "must not exceed p_initial")?;
    check(t.retry_cap >= 1, f("tutor_options.retry_cap"), "must be at least 1")?;
    check(t.latency_seconds.is_finite() && t.latency_seconds >= 0.0, f("tutor_options.latency_seconds"), "must be non-negative")?;
    check(in_unit(t.malformed_rate), f("tutor_options.malformed_rate"), "must lie in [0, 1]")?;
    check(t.timeout_seconds > 0.0 && t.timeout_seconds.is_finite(), f("tutor_options.timeout_seconds"), "must be positive")?;

    let hidden =
        |name: &str, layers: &[usize]| check(!layers.is_empty() && layers.iter().all(|&w| w > 0), f(name), "must list positive layer widths");
    let d = &cell.dqn;
    check(d.learning_rate > 0.0, f("dqn.learning_rate"), "must be positive")?;
    check(in_unit(d.gamma), f("dqn.gamma"), "must lie in [0, 1]")?;
    check(d.batch_size >= 1, f("dqn.batch_size"), "must be at least 1")?;
    check(d.buffer_capacity >= d.batch_size, f("dqn.buffer_capacity"), "must be at least batch_size")?;
    check(d.target_sync_interval >= 1, f("dqn.target_sync_interval"), "must be at least 1")?;
    check(in_unit(d.epsilon_start) && in_unit(d.epsilon_end), f("dqn.epsilon_start"), "epsilons must lie in [0, 1]")?;
    check(d.max_grad_norm > 0.0, f("dqn.max_grad_norm"), "must be positive")?;
    hidden("dqn.hidden", &d.hidden)?;

    let p = &cell.ppo;
    check(p.learning_rate > 0.0, f("ppo.learning_rate"), "must be positive")?;
    check(in_unit(p.gamma), f("ppo.gamma"), "must lie in [0, 1]")?;
    check(p.clip_range > 0.0, f("ppo.clip_range"), "must be positive")?;
    check(p.batch_size >= 1, f("ppo.batch_size"), "must be at least 1")?;
    check(p.n_steps >= 1, f("ppo.n_steps"), "must be at least 1")?;
    check(p.n_epochs >= 1, f("ppo.n_epochs"), "must be at least 1")?;
    check(in_unit(p.gae_lambda), f("ppo.gae_lambda"), "must lie in [0, 1]")?;
    check(p.max_grad_norm > 0.0, f("ppo.max_grad_norm"), "must be positive")?;
    hidden("ppo.hidden", &p.hidden)?;

    let a = &cell.a2c;
    check(a.learning_rate > 0.0, f("a2c.learning_rate"), "must be positive")?;
    check(in_unit(a.gamma), f("a2c.gamma"), "must lie in [0, 1]")?;
    check(a.n_steps >= 1, f("a2c.n_steps"), "must be at least 1")?;
    check(in_unit(a.gae_lambda), f("a2c.gae_lambda"), "must lie in [0, 1]")?;
    check(a.max_grad_norm > 0.0, f("a2c.max_grad_norm"), "must be positive")?;
    hidden("a2c.hidden", &a.hidden)?;

    check(cell.env.snake.initial_length >= 1, f("env.snake.initial_length"), "must be at least 1")?;
    check(cell.env.snake.max_steps_without_food >= 1, f("env.snake.max_steps_without_food"), "must be at least 1")?;
    Ok(())
}
