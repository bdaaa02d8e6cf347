//! Configuration, experiment execution, persistence and reporting.

mod config;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    default_steps, load_config, parse_config, validate, ConfigError, ConfigFile, ExperimentConfig, TutorOptions, TutorSpec, DEFAULT_SEEDS,
    DEFAULT_SMOOTHING_WINDOW,
};
pub use report::{read_summary, report, Report, ReportError, Table2Row, Table3Row, SUMMARY_COLUMNS};

use crate::agents::{self, A2cAgent, Agent, Algorithm, DecisionCounts, DqnAgent, PpoAgent, TrainError};
use crate::envs::make_env;
use crate::metrics::{self, CurveIndexing, MetricsError, NormalizedCurve, TimeLedger};
use crate::nn::{write_checkpoint, NnError};
use crate::tutor::{self, HttpLlmBackend, ScriptedBackend, TutorBackend, TutorConfig, TutorGate, TutorStats};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const RUNS_DIR: &str = "runs";
pub const CURVES_DIR: &str = "curves";
pub const CHECKPOINTS_DIR: &str = "checkpoints";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}: {1}")]
    Io(PathBuf, io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("corrupt run record {0}: {1}")]
    Record(PathBuf, serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |e| RunError::Io(path.to_path_buf(), e)
}

/// Mixes a run seed with a stream tag so each component draws independently.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One seed of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    /// Cell configuration with `seeds` narrowed to this run's seed.
    pub config: ExperimentConfig,
    pub seed: u64,
}

impl RunSpec {
    pub fn new(cell: &ExperimentConfig, seed: u64) -> Self {
        Self { config: ExperimentConfig { seeds: vec![seed], ..cell.clone() }, seed }
    }

    /// File-name-safe identifier.
    pub fn id(&self) -> String {
        let c = &self.config;
        let tutor: String = c.tutor.to_string().chars().map(|ch| if ch.is_ascii_alphanumeric() || ch == '.' { ch } else { '-' }).collect();
        let reuse = match c.reuse {
            None => "na",
            Some(true) => "reuse",
            Some(false) => "noreuse",
        };
        format!("{}-{}-{}-{}-s{}", c.environment.as_str(), c.algorithm.as_str(), tutor, reuse, self.seed)
    }

    /// SHA-256 of the canonical JSON form; object keys are sorted, so field order in the file is irrelevant.
    pub fn config_hash(&self) -> String {
        let value = serde_json::to_value(&self.config).expect("config serializes");
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn expand_runs(cells: &[ExperimentConfig]) -> Vec<RunSpec> {
    cells.iter().flat_map(|cell| cell.seeds.iter().map(move |&seed| RunSpec::new(cell, seed))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scoring {
    /// Range used for min-max normalization across the run's (environment, algorithm) group.
    pub group_min: f64,
    pub group_max: f64,
    pub convergence_score: f64,
}

/// Persisted outcome of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    /// Raw performance curve under the configured indexing.
    pub curve: Vec<f64>,
    pub episodes: usize,
    pub steps: u64,
    pub updates: u64,
    pub decisions: DecisionCounts,
    /// Counters and per-query latencies; absent without a tutor.
    pub tutor: Option<TutorStats>,
    /// Measured training time. Not part of the summary row.
    pub elapsed_seconds: f64,
    /// Relative to the output directory.
    pub checkpoint: Option<String>,
    pub scoring: Option<Scoring>,
}

impl RunRecord {
    pub fn time_ledger(&self) -> TimeLedger {
        match &self.tutor {
            None => TimeLedger::default(),
            Some(stats) => TimeLedger {
                reuse_count: stats.reuses,
                latencies: stats.latencies.clone(),
                fresh_query_count: stats.queries,
                reuse_latencies: stats.reuse_latencies.clone(),
            },
        }
    }

    /// Summary row; `None` until the record has been scored.
    pub fn summary_row(&self) -> Option<SummaryRow> {
        let scoring = self.scoring.as_ref()?;
        let ledger = self.time_ledger();
        Some(SummaryRow {
            environment: self.config.environment.as_str().to_string(),
            algorithm: self.config.algorithm.as_str().to_string(),
            tutor: self.config.tutor.to_string(),
            reuse: self.config.reuse_label().to_string(),
            seed: self.seed.to_string(),
            convergence_score: scoring.convergence_score,
            fresh_queries: ledger.fresh_query_count as f64,
            reuses: ledger.reuse_count as f64,
            saved_minutes: metrics::saved_time_minutes(&ledger).expect("a reuse always follows a timed query"),
            wall_clock_seconds: ledger.total_latency(),
        })
    }
}

/// One line of the summary CSV. `wall_clock_seconds` is the accounted tutor time.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub environment: String,
    pub algorithm: String,
    pub tutor: String,
    pub reuse: String,
    /// A seed, or `mean` for the per-cell average.
    pub seed: String,
    pub convergence_score: f64,
    pub fresh_queries: f64,
    pub reuses: f64,
    pub saved_minutes: f64,
    pub wall_clock_seconds: f64,
}

impl SummaryRow {
    pub fn fields(&self) -> [String; 10] {
        [
            self.environment.clone(),
            self.algorithm.clone(),
            self.tutor.clone(),
            self.reuse.clone(),
            self.seed.clone(),
            self.convergence_score.to_string(),
            self.fresh_queries.to_string(),
            self.reuses.to_string(),
            self.saved_minutes.to_string(),
            self.wall_clock_seconds.to_string(),
        ]
    }

    fn mean(rows: &[SummaryRow]) -> SummaryRow {
        let n = rows.len() as f64;
        let avg = |f: fn(&SummaryRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        SummaryRow {
            seed: "mean".to_string(),
            convergence_score: avg(|r| r.convergence_score),
            fresh_queries: avg(|r| r.fresh_queries),
            reuses: avg(|r| r.reuses),
            saved_minutes: avg(|r| r.saved_minutes),
            wall_clock_seconds: avg(|r| r.wall_clock_seconds),
            ..rows[0].clone()
        }
    }
}

fn build_agent(config: &ExperimentConfig, seed: u64) -> Box<dyn Agent> {
    let (features, actions) = (config.environment.feature_len(), config.environment.action_count());
    match config.algorithm {
        Algorithm::Dqn => Box::new(DqnAgent::new(config.dqn.clone(), features, actions, seed)),
        Algorithm::Ppo => Box::new(PpoAgent::new(config.ppo.clone(), features, actions, seed)),
        Algorithm::A2c => Box::new(A2cAgent::new(config.a2c.clone(), features, actions, seed)),
    }
}

fn build_gate(config: &ExperimentConfig, seed: u64) -> Option<TutorGate> {
    let options = &config.tutor_options;
    let backend: Box<dyn TutorBackend> = match &config.tutor {
        TutorSpec::None => return None,
        TutorSpec::Scripted(policy) => Box::new(
            ScriptedBackend::new(*policy, derive_seed(seed, 2)).with_latency(options.latency_seconds).with_malformed_rate(options.malformed_rate),
        ),
        TutorSpec::Http { model } => Box::new(HttpLlmBackend::new(
            tutor::http::resolve_base_url(options.base_url.as_deref()),
            model.clone(),
            Duration::from_secs_f64(options.timeout_seconds),
        )),
    };
    let tutor_config = TutorConfig {
        p_initial: options.p_initial,
        p_final: options.p_final,
        theta: config.decay_steps,
        budget: options.budget,
        retry_cap: options.retry_cap,
        reuse: config.reuse.unwrap_or(true),
    };
    Some(TutorGate::new(&tutor_config, backend, derive_seed(seed, 1)))
}

/// Trains one run. The record is unscored; `checkpoint` is written when given.
pub fn execute_run(spec: &RunSpec, checkpoint: Option<(&Path, String)>) -> Result<RunRecord, RunError> {
    let config = &spec.config;
    let started = Instant::now();
    let mut agent = build_agent(config, spec.seed);
    let mut env = make_env(config.environment, &config.env);
    let mut gate = build_gate(config, spec.seed);
    let log = agents::train(agent.as_mut(), env.as_mut(), gate.as_mut(), config.total_steps, spec.seed)?;
    let checkpoint = match checkpoint {
        Some((root, relative)) => {
            let path = root.join(&relative);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            write_checkpoint(&path, &agent.networks())?;
            Some(relative)
        }
        None => None,
    };
    let curve = match config.curve_indexing {
        CurveIndexing::Episode => log.episode_returns.clone(),
        CurveIndexing::Step => log.step_curve(),
    };
    Ok(RunRecord {
        id: spec.id(),
        config_hash: spec.config_hash(),
        config: config.clone(),
        seed: spec.seed,
        curve,
        episodes: log.episode_returns.len(),
        steps: log.steps,
        updates: log.updates,
        decisions: log.decisions,
        tutor: log.tutor,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        checkpoint,
        scoring: None,
    })
}

/// Normalizes each (environment, algorithm) group together and attaches scores.
/// Groups that cannot be normalized are returned as errors keyed by group.
pub fn score_records(records: &mut [RunRecord]) -> Vec<(String, MetricsError)> {
    let mut groups: BTreeMap<(&'static str, &'static str), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry((r.config.environment.as_str(), r.config.algorithm.as_str())).or_default().push(i);
    }
    let mut failures = Vec::new();
    for ((env, alg), members) in groups {
        let curves: Vec<Vec<f64>> = members.iter().map(|&i| records[i].curve.clone()).collect();
        match metrics::normalize_set(&curves) {
            Ok(normalized) => {
                let lo = curves.iter().flatten().copied().fold(f64::INFINITY, f64::min);
                let hi = curves.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
                for (&i, curve) in members.iter().zip(&normalized) {
                    records[i].scoring = Some(Scoring { group_min: lo, group_max: hi, convergence_score: metrics::convergence_score(curve) });
                }
            }
            Err(e) => {
                for &i in &members {
                    records[i].scoring = None;
                }
                failures.push((format!("{env}/{alg}"), e));
            }
        }
    }
    failures
}

/// Normalized curve of a scored record.
pub fn normalized_curve(record: &RunRecord) -> Option<NormalizedCurve> {
    let s = record.scoring.as_ref()?;
    let span = s.group_max - s.group_min;
    Some(NormalizedCurve { t: metrics::normalized_time(record.curve.len()), p_hat: record.curve.iter().map(|v| (v - s.group_min) / span).collect() })
}

/// Per-run plot CSV with the record's configured smoothing window, or `window` when given.
pub fn write_curve_csv(record: &RunRecord, path: &Path, window: Option<usize>) -> Result<(), RunError> {
    let Some(normalized) = normalized_curve(record) else { return Ok(()) };
    let smoothed = metrics::smooth_for_plot(&record.curve, window.unwrap_or(record.config.smoothing_window))?;
    let file = fs::File::create(path).map_err(io_err(path))?;
    metrics::write_run_csv(io::BufWriter::new(file), &record.curve, &smoothed, &normalized)?;
    Ok(())
}

/// Per-seed rows grouped by cell, each group followed by its mean row.
pub fn summary_rows(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < records.len() {
        let key = |r: &RunRecord| {
            let mut cell = r.config.clone();
            cell.seeds.clear();
            serde_json::to_string(&cell).expect("config serializes")
        };
        let cell = key(&records[i]);
        let mut rows = Vec::new();
        while i < records.len() && key(&records[i]) == cell {
            rows.extend(records[i].summary_row());
            i += 1;
        }
        if !rows.is_empty() {
            let mean = SummaryRow::mean(&rows);
            out.extend(rows);
            out.push(mean);
        }
    }
    out
}

pub fn write_summary<W: io::Write>(writer: W, rows: &[SummaryRow]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(SUMMARY_COLUMNS)?;
    for row in rows {
        out.write_record(row.fields())?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct MatrixOptions {
    pub out_dir: PathBuf,
    pub parallel: usize,
    /// Skip runs whose stored record carries the same config hash.
    pub resume: bool,
}

#[derive(Debug, Default)]
pub struct MatrixOutcome {
    /// Records in expansion order, scored where possible.
    pub records: Vec<RunRecord>,
    /// Ids of runs loaded from disk instead of trained.
    pub resumed: Vec<String>,
    /// Runs or groups that failed, with the reason.
    pub failures: Vec<(String, String)>,
}

fn record_path(out_dir: &Path, id: &str) -> PathBuf {
    out_dir.join(RUNS_DIR).join(format!("{id}.json"))
}

pub fn read_record(path: &Path) -> Result<RunRecord, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| RunError::Record(path.to_path_buf(), e))
}

pub fn write_record(out_dir: &Path, record: &RunRecord) -> Result<(), RunError> {
    let path = record_path(out_dir, &record.id);
    let text = serde_json::to_string_pretty(record).expect("record serializes");
    fs::write(&path, text).map_err(io_err(&path))
}

/// All records stored under an output directory, sorted by id.
pub fn read_records(out_dir: &Path) -> Result<Vec<RunRecord>, RunError> {
    let dir = out_dir.join(RUNS_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_record(p)).collect()
}

/// Runs every spec, at most `parallel` at a time, then scores and writes all outputs.
pub fn run_matrix(specs: &[RunSpec], options: &MatrixOptions) -> Result<MatrixOutcome, RunError> {
    let out = options.out_dir.as_path();
    for dir in [out.join(RUNS_DIR), out.join(CURVES_DIR), out.join(CHECKPOINTS_DIR)] {
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let mut slots: Vec<Option<RunRecord>> = vec![None; specs.len()];
    let mut outcome = MatrixOutcome::default();
    let mut pending = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let path = record_path(out, &spec.id());
        if options.resume && path.exists() {
            if let Ok(record) = read_record(&path) {
                if record.config_hash == spec.config_hash() {
                    outcome.resumed.push(record.id.clone());
                    slots[i] = Some(record);
                    continue;
                }
            }
        }
        pending.push(i);
    }

    let workers = options.parallel.max(1).min(pending.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| -> Result<(), RunError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending) = (&next, &pending);
            scope.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&i) = pending.get(k) else { break };
                let spec = &specs[i];
                let checkpoint = format!("{CHECKPOINTS_DIR}/{}.ckpt", spec.id());
                let result = execute_run(spec, Some((out, checkpoint)));
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, result) in rx {
            match result {
                Ok(record) => {
                    write_record(out, &record)?;
                    slots[i] = Some(record);
                }
                Err(e) => outcome.failures.push((specs[i].id(), e.to_string())),
            }
        }
        Ok(())
    })?;

    outcome.records = slots.into_iter().flatten().collect();
    for (group, e) in score_records(&mut outcome.records) {
        outcome.failures.push((group, e.to_string()));
    }
    for record in &outcome.records {
        write_record(out, record)?;
        write_curve_csv(record, &out.join(CURVES_DIR).join(format!("{}.csv", record.id)), None)?;
    }
    let summary = out.join(SUMMARY_FILE);
    let file = fs::File::create(&summary).map_err(io_err(&summary))?;
    write_summary(io::BufWriter::new(file), &summary_rows(&outcome.records))?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;
    use crate::tutor::ScriptPolicy;

    fn quick(environment: EnvKind, algorithm: Algorithm, tutor: TutorSpec, reuse: Option<bool>) -> ExperimentConfig {
        let mut cell = ExperimentConfig::new(environment);
        cell.algorithm = algorithm;
        cell.tutor = tutor;
        cell.reuse = reuse;
        cell.total_steps = 300;
        cell.decay_steps = 100;
        cell.seeds = vec![1, 2];
        cell
    }

    fn temp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("tutor-rl-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = parse_config("environment = \"snake\"\nalgorithm = \"ppo\"\n[ppo]\nclip_range = 0.3\nn_epochs = 4\n").unwrap();
        let b = parse_config("algorithm = \"ppo\"\nenvironment = \"snake\"\n[ppo]\nn_epochs = 4\nclip_range = 0.3\n").unwrap();
        let (ra, rb) = (RunSpec::new(&a.cells[0], 1), RunSpec::new(&b.cells[0], 1));
        assert_eq!(ra.config_hash(), rb.config_hash());
        assert_ne!(ra.config_hash(), RunSpec::new(&a.cells[0], 2).config_hash());
    }

    #[test]
    fn run_ids_are_distinct() {
        let cells = [
            quick(EnvKind::Snake, Algorithm::Dqn, TutorSpec::None, None),
            quick(EnvKind::Snake, Algorithm::Dqn, TutorSpec::Http { model: "llama3.1:8b".into() }, Some(true)),
            quick(EnvKind::Snake, Algorithm::Dqn, TutorSpec::Http { model: "llama3.1:8b".into() }, Some(false)),
        ];
        let ids: Vec<String> = expand_runs(&cells).iter().map(RunSpec::id).collect();
        assert_eq!(ids[2], "snake-dqn-http-llama3.1-8b-reuse-s1");
        let mut unique = ids.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 6);
    }

    #[test]
    fn record_reconstructs_summary_row() {
        let spec = RunSpec::new(&quick(EnvKind::Blackjack, Algorithm::A2c, TutorSpec::Scripted(ScriptPolicy::Optimal), Some(true)), 3);
        let mut records = vec![execute_run(&spec, None).unwrap()];
        assert!(score_records(&mut records).is_empty());
        let json = serde_json::to_string(&records[0]).unwrap();
        let back: RunRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.summary_row(), records[0].summary_row());
        let row = back.summary_row().unwrap();
        let stats = back.tutor.as_ref().unwrap();
        assert_eq!(row.fresh_queries, stats.queries as f64);
        assert_eq!(row.reuses, stats.reuses as f64);
        assert!(row.reuses > 0.0);
        assert!((row.wall_clock_seconds - stats.queries as f64 * 0.01).abs() < 1e-9);
    }

    #[test]
    fn matrix_writes_outputs_and_resumes() {
        let dir = temp_dir("matrix");
        let cells = [
            quick(EnvKind::Blackjack, Algorithm::Dqn, TutorSpec::None, None),
            quick(EnvKind::Blackjack, Algorithm::Dqn, TutorSpec::Scripted(ScriptPolicy::Heuristic), Some(true)),
        ];
        let specs = expand_runs(&cells);
        let options = MatrixOptions { out_dir: dir.clone(), parallel: 2, resume: false };
        let first = run_matrix(&specs, &options).unwrap();
        assert!(first.failures.is_empty(), "{:?}", first.failures);
        assert_eq!(first.records.len(), 4);
        let summary = fs::read_to_string(dir.join(SUMMARY_FILE)).unwrap();
        assert_eq!(summary.lines().count(), 1 + 2 * 3);
        for spec in &specs {
            assert!(dir.join(CURVES_DIR).join(format!("{}.csv", spec.id())).exists());
            assert!(dir.join(CHECKPOINTS_DIR).join(format!("{}.ckpt", spec.id())).exists());
        }
        let seeds: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
        assert_eq!(seeds, ["1", "2", "mean", "1", "2", "mean"]);

        let again = run_matrix(&specs, &MatrixOptions { resume: true, ..options.clone() }).unwrap();
        assert_eq!(again.resumed.len(), 4);
        assert_eq!(fs::read_to_string(dir.join(SUMMARY_FILE)).unwrap(), summary);

        let mut changed = cells.to_vec();
        changed[1].tutor_options.budget = 1;
        let again = run_matrix(&expand_runs(&changed), &MatrixOptions { resume: true, ..options }).unwrap();
        assert_eq!(again.resumed.len(), 2);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn failing_group_does_not_stop_the_matrix() {
        let mut broken = quick(EnvKind::Snake, Algorithm::Ppo, TutorSpec::None, None);
        broken.total_steps = 1;
        broken.seeds = vec![1];
        let fine = quick(EnvKind::Blackjack, Algorithm::Ppo, TutorSpec::None, None);
        let dir = temp_dir("failing");
        let outcome = run_matrix(&expand_runs(&[broken, fine]), &MatrixOptions { out_dir: dir.clone(), parallel: 3, resume: false }).unwrap();
        assert_eq!(outcome.failures.len(), 1);
        assert_eq!(outcome.failures[0].0, "snake/ppo");
        let summary = fs::read_to_string(dir.join(SUMMARY_FILE)).unwrap();
        assert_eq!(summary.lines().count(), 1 + 3);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
