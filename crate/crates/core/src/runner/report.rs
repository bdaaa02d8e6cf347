//! Table-shaped views of a summary CSV.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use crate::metrics::{pearson, MetricsError, Pearson};

pub const SUMMARY_COLUMNS: [&str; 10] =
    ["environment", "algorithm", "tutor", "reuse", "seed", "convergence_score", "fresh_queries", "reuses", "saved_minutes", "wall_clock_seconds"];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("summary is missing columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("row {row}: bad `{column}` value `{value}`")]
    BadValue { row: usize, column: String, value: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One per-seed summary line as read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryEntry {
    pub environment: String,
    pub algorithm: String,
    pub tutor: String,
    pub reuse: String,
    pub seed: String,
    pub convergence_score: f64,
    pub fresh_queries: f64,
    pub reuses: f64,
    pub saved_minutes: f64,
    pub wall_clock_seconds: f64,
}

/// Per-seed entries; `mean` rows are skipped and recomputed by the report.
pub fn read_summary<R: io::Read>(reader: R) -> Result<Vec<SummaryEntry>, ReportError> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv.headers().cloned().unwrap_or_default();
    let index: BTreeMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let missing: Vec<String> = SUMMARY_COLUMNS.iter().filter(|c| !index.contains_key(*c)).map(|c| c.to_string()).collect();
    if !missing.is_empty() {
        return Err(ReportError::MissingColumns(missing));
    }
    let mut entries = Vec::new();
    for (row, record) in csv.records().enumerate() {
        let record = record?;
        let text = |c: &str| record.get(index[c]).unwrap_or("").to_string();
        let number = |c: &str| {
            let value = text(c);
            value.parse::<f64>().map_err(|_| ReportError::BadValue { row: row + 1, column: c.to_string(), value })
        };
        if text("seed") == "mean" {
            continue;
        }
        entries.push(SummaryEntry {
            environment: text("environment"),
            algorithm: text("algorithm"),
            tutor: text("tutor"),
            reuse: text("reuse"),
            seed: text("seed"),
            convergence_score: number("convergence_score")?,
            fresh_queries: number("fresh_queries")?,
            reuses: number("reuses")?,
            saved_minutes: number("saved_minutes")?,
            wall_clock_seconds: number("wall_clock_seconds")?,
        });
    }
    Ok(entries)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table2Row {
    pub environment: String,
    pub algorithm: String,
    pub tutor: String,
    pub reuse: String,
    pub mean_score: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table3Row {
    pub environment: String,
    pub algorithm: String,
    pub tutor: String,
    pub mean_reuses: f64,
    /// Tutor seconds per query; `None` when no query was made.
    pub mean_latency: Option<f64>,
    pub mean_saved_minutes: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub table2: Vec<Table2Row>,
    pub table3: Vec<Table3Row>,
    /// Tutor size against score over table-2 rows whose tutor has a configured size.
    pub size_correlation: Option<Result<Pearson, MetricsError>>,
}

fn size_of<'a>(sizes: &'a BTreeMap<String, f64>, tutor: &str) -> Option<&'a f64> {
    sizes.get(tutor).or_else(|| tutor.split_once(':').and_then(|(_, model)| sizes.get(model)))
}

pub fn report(entries: &[SummaryEntry], tutor_sizes: &BTreeMap<String, f64>) -> Report {
    let mut cells: Vec<((String, String, String, String), Vec<&SummaryEntry>)> = Vec::new();
    for e in entries {
        let key = (e.environment.clone(), e.algorithm.clone(), e.tutor.clone(), e.reuse.clone());
        match cells.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(e),
            None => cells.push((key, vec![e])),
        }
    }
    let mean = |members: &[&SummaryEntry], f: fn(&SummaryEntry) -> f64| members.iter().map(|e| f(e)).sum::<f64>() / members.len() as f64;
    let table2: Vec<Table2Row> = cells
        .iter()
        .map(|((environment, algorithm, tutor, reuse), members)| Table2Row {
            environment: environment.clone(),
            algorithm: algorithm.clone(),
            tutor: tutor.clone(),
            reuse: reuse.clone(),
            mean_score: mean(members, |e| e.convergence_score),
            seeds: members.len(),
        })
        .collect();
    let table3 = cells
        .iter()
        .filter(|((_, _, _, reuse), _)| reuse == "true")
        .map(|((environment, algorithm, tutor, _), members)| {
            let queries: f64 = members.iter().map(|e| e.fresh_queries).sum();
            let seconds: f64 = members.iter().map(|e| e.wall_clock_seconds).sum();
            Table3Row {
                environment: environment.clone(),
                algorithm: algorithm.clone(),
                tutor: tutor.clone(),
                mean_reuses: mean(members, |e| e.reuses),
                mean_latency: (queries > 0.0).then(|| seconds / queries),
                mean_saved_minutes: mean(members, |e| e.saved_minutes),
            }
        })
        .collect();
    let (sizes, scores): (Vec<f64>, Vec<f64>) =
        table2.iter().filter_map(|row| size_of(tutor_sizes, &row.tutor).map(|&size| (size, row.mean_score))).unzip();
    let size_correlation = (!sizes.is_empty()).then(|| pearson(&sizes, &scores));
    Report { table2, table3, size_correlation }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Convergence score by cell")?;
        writeln!(f, "{:<13} {:<5} {:<28} {:<6} {:>8} {:>6}", "environment", "alg", "tutor", "reuse", "score", "seeds")?;
        for r in &self.table2 {
            writeln!(f, "{:<13} {:<5} {:<28} {:<6} {:>8.4} {:>6}", r.environment, r.algorithm, r.tutor, r.reuse, r.mean_score, r.seeds)?;
        }
        writeln!(f)?;
        writeln!(f, "Time saved by reuse")?;
        writeln!(f, "{:<13} {:<5} {:<28} {:>9} {:>11} {:>9}", "environment", "alg", "tutor", "reuses", "latency_s", "saved_min")?;
        for r in &self.table3 {
            let latency = r.mean_latency.map_or_else(|| "-".to_string(), |l| format!("{l:.2}"));
            writeln!(
                f,
                "{:<13} {:<5} {:<28} {:>9.1} {:>11} {:>9.2}",
                r.environment, r.algorithm, r.tutor, r.mean_reuses, latency, r.mean_saved_minutes
            )?;
        }
        match &self.size_correlation {
            None => Ok(()),
            Some(Ok(p)) => {
                let pv = p.p_value.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
                writeln!(f)?;
                writeln!(f, "Tutor size vs score: r = {:.4}, p = {pv}, n = {}", p.r, p.n)
            }
            Some(Err(e)) => {
                writeln!(f)?;
                writeln!(f, "Tutor size vs score: {e}")
            }
        }
    }
}
