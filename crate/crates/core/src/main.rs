use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use tutor_rl::runner::{
    self, expand_runs, load_config, read_records, read_summary, run_matrix, write_curve_csv, ExperimentConfig, MatrixOptions, CURVES_DIR,
    SUMMARY_FILE,
};
use tutor_rl::tutor::{StubConfig, StubServer};

#[derive(Parser)]
#[command(name = "tutor-rl", version, about = "Tutor-guided reinforcement learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one cell and write its outputs.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run this seed only.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Run every cell of a matrix file.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        /// Replace each cell's seed list with this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Print score and time-saved tables from a summary CSV.
    Report {
        /// Summary CSV; defaults to summary.csv under --out.
        summary: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Config file whose `tutor_sizes` table enables the size correlation.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rewrite per-run plot CSVs from stored run records.
    PlotData {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Moving-average window; defaults to each run's configured window.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Serve canned replies over the generate endpoint until interrupted.
    StubLlm {
        #[arg(long, default_value_t = 11434)]
        port: u16,
        /// Reply text, repeatable; replies rotate.
        #[arg(long = "reply")]
        replies: Vec<String>,
        #[arg(long, default_value_t = 0.0)]
        malformed_rate: f64,
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn cells_for(config: &Path, seed: Option<u64>, single: bool) -> Result<Vec<ExperimentConfig>, String> {
    let file = load_config(config).map_err(|e| e.to_string())?;
    if single && file.cells.len() != 1 {
        return Err(format!("{} describes {} cells; use `matrix`", config.display(), file.cells.len()));
    }
    let mut cells = file.cells;
    if let Some(seed) = seed {
        for cell in &mut cells {
            cell.seeds = vec![seed];
        }
    }
    Ok(cells)
}

fn run(cells: &[ExperimentConfig], parallel: usize, out: PathBuf, resume: bool) -> Result<(), String> {
    let specs = expand_runs(cells);
    let outcome = run_matrix(&specs, &MatrixOptions { out_dir: out.clone(), parallel, resume }).map_err(|e| e.to_string())?;
    for id in &outcome.resumed {
        eprintln!("resumed {id}");
    }
    for (id, reason) in &outcome.failures {
        eprintln!("failed {id}: {reason}");
    }
    print!("{}", fs::read_to_string(out.join(SUMMARY_FILE)).map_err(|e| e.to_string())?);
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(format!("{} failure(s)", outcome.failures.len()))
    }
}

fn execute(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Train { config, seed, out, resume } => run(&cells_for(&config, seed, true)?, 1, out, resume),
        Command::Matrix { config, seed, parallel, out, resume } => run(&cells_for(&config, seed, false)?, parallel, out, resume),
        Command::Report { summary, out, config } => {
            let path = summary.unwrap_or_else(|| out.join(SUMMARY_FILE));
            let file = fs::File::open(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let entries = read_summary(file).map_err(|e| e.to_string())?;
            let sizes = match config {
                Some(c) => load_config(&c).map_err(|e| e.to_string())?.tutor_sizes,
                None => BTreeMap::new(),
            };
            print!("{}", runner::report(&entries, &sizes));
            Ok(())
        }
        Command::PlotData { out, window } => {
            let dir = out.join(CURVES_DIR);
            fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            let records = read_records(&out).map_err(|e| e.to_string())?;
            for record in &records {
                let path = dir.join(format!("{}.csv", record.id));
                write_curve_csv(record, &path, window).map_err(|e| e.to_string())?;
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::StubLlm { port, replies, malformed_rate, delay_ms, seed } => {
            let mut config = StubConfig { malformed_rate, delay: Duration::from_millis(delay_ms), seed, ..StubConfig::default() };
            if !replies.is_empty() {
                config.replies = replies;
            }
            let server = StubServer::start(&format!("127.0.0.1:{port}"), config).map_err(|e| e.to_string())?;
            println!("listening on {}", server.base_url());
            server.join();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
