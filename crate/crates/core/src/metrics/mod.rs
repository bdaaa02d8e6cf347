//! Curve normalization, the area-under-curve convergence score, time-saved
//! accounting, Pearson correlation and plot-data emission.

use std::io;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot normalize: global maximum equals global minimum ({0})")]
    DegenerateRange(f64),
    #[error("no curves, or an empty curve, to normalize")]
    EmptyCurve,
    #[error("curve contains a non-finite value")]
    NonFinite,
    #[error("reuses recorded without any response latency")]
    EmptyLedger,
    #[error("series have zero variance")]
    ZeroVariance,
    #[error("series lengths differ or are shorter than 2 ({0})")]
    BadLength(usize),
    #[error("smoothing window must be odd and at least 1, got {0}")]
    BadWindow(usize),
}

/// Whether curve samples are one per episode or one per environment step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveIndexing {
    #[default]
    Episode,
    Step,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCurve {
    pub t: Vec<f64>,
    pub p_hat: Vec<f64>,
}

/// Sample positions on `[0, 1]`, first at 0 and last at 1.
pub fn normalized_time(len: usize) -> Vec<f64> {
    match len {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Scales every curve with the minimum and maximum taken over all curves.
pub fn normalize_set(curves: &[Vec<f64>]) -> Result<Vec<NormalizedCurve>, MetricsError> {
    if curves.is_empty() || curves.iter().any(|c| c.is_empty()) {
        return Err(MetricsError::EmptyCurve);
    }
    if curves.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let lo = curves.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = curves.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(MetricsError::DegenerateRange(lo));
    }
    Ok(curves.iter().map(|c| NormalizedCurve { t: normalized_time(c.len()), p_hat: c.iter().map(|&v| (v - lo) / (hi - lo)).collect() }).collect())
}

/// Trapezoidal area under `p_hat` over `t`. A single sample scores its own value.
pub fn convergence_score(curve: &NormalizedCurve) -> f64 {
    match curve.p_hat.len() {
        0 => 0.0,
        1 => curve.p_hat[0],
        _ => curve.t.windows(2).zip(curve.p_hat.windows(2)).map(|(t, p)| (t[1] - t[0]) * (p[0] + p[1]) / 2.0).sum(),
    }
}

/// Normalizes a set of raw curves together and scores each one.
pub fn score_set(curves: &[Vec<f64>]) -> Result<Vec<f64>, MetricsError> {
    Ok(normalize_set(curves)?.iter().map(convergence_score).collect())
}

/// Tutor time bookkeeping for one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeLedger {
    pub reuse_count: u64,
    /// Latency of every fresh query, in seconds.
    pub latencies: Vec<f64>,
    pub fresh_query_count: u64,
    /// Optional per-reuse latency of the reply that was reused.
    #[serde(default)]
    pub reuse_latencies: Vec<f64>,
}

impl TimeLedger {
    pub fn mean_latency(&self) -> Option<f64> {
        (!self.latencies.is_empty()).then(|| self.latencies.iter().sum::<f64>() / self.latencies.len() as f64)
    }

    pub fn total_latency(&self) -> f64 {
        self.latencies.iter().fold(0.0, |acc, x| acc + x)
    }
}

/// `reuse_count * mean latency / 60`.
pub fn saved_time_minutes(ledger: &TimeLedger) -> Result<f64, MetricsError> {
    if ledger.reuse_count == 0 {
        return Ok(0.0);
    }
    let mean = ledger.mean_latency().ok_or(MetricsError::EmptyLedger)?;
    Ok(ledger.reuse_count as f64 * mean / 60.0)
}

/// Per-event variant: the sum of the reused replies' own latencies, in minutes.
pub fn saved_time_minutes_per_event(ledger: &TimeLedger) -> f64 {
    ledger.reuse_latencies.iter().fold(0.0, |acc, x| acc + x) / 60.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pearson {
    pub r: f64,
    /// Two-sided p-value from the t distribution with `n - 2` degrees of freedom; absent for `n < 3`.
    pub p_value: Option<f64>,
    pub n: usize,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Pearson, MetricsError> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return Err(MetricsError::BadLength(n.min(ys.len())));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let p_value = (n >= 3).then(|| {
        let df = (n - 2) as f64;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        2.0 * (1.0 - dist.cdf(t.abs()))
    });
    Ok(Pearson { r, p_value, n })
}

/// Centered moving average; near the ends the window shrinks symmetrically.
pub fn smooth_for_plot(values: &[f64], window: usize) -> Result<Vec<f64>, MetricsError> {
    if window == 0 || window % 2 == 0 {
        return Err(MetricsError::BadWindow(window));
    }
    let n = values.len();
    let half = window / 2;
    Ok((0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let slice = &values[i - h..=i + h];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

pub const RUN_CSV_HEADER: [&str; 5] = ["episode_index", "raw_return", "smoothed_return", "t_normalized", "p_hat"];

/// One row per sample: raw and smoothed value plus its normalized position.
pub fn write_run_csv<W: io::Write>(writer: W, raw: &[f64], smoothed: &[f64], normalized: &NormalizedCurve) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(RUN_CSV_HEADER)?;
    for i in 0..raw.len() {
        out.write_record([i.to_string(), raw[i].to_string(), smoothed[i].to_string(), normalized.t[i].to_string(), normalized.p_hat[i].to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_curve_normalization() {
        let n = normalize_set(&[vec![0.0, 5.0, 10.0]]).unwrap();
        assert_eq!(n[0].p_hat, vec![0.0, 0.5, 1.0]);
        assert_eq!(n[0].t, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn global_extremes_map_to_unit_interval() {
        let n = normalize_set(&[vec![2.0, 4.0, -1.0], vec![7.0, 3.0]]).unwrap();
        assert_eq!(n[0].p_hat[2], 0.0);
        assert_eq!(n[1].p_hat[0], 1.0);
        assert!(n.iter().flat_map(|c| &c.p_hat).all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn degenerate_sets_are_rejected() {
        assert_eq!(normalize_set(&[vec![3.0, 3.0], vec![3.0]]), Err(MetricsError::DegenerateRange(3.0)));
        assert_eq!(normalize_set(&[]), Err(MetricsError::EmptyCurve));
        assert_eq!(normalize_set(&[vec![1.0], vec![]]), Err(MetricsError::EmptyCurve));
        assert_eq!(normalize_set(&[vec![1.0, f64::NAN]]), Err(MetricsError::NonFinite));
    }

    #[test]
    fn reference_scores() {
        let flat = NormalizedCurve { t: normalized_time(50), p_hat: vec![1.0; 50] };
        assert!((convergence_score(&flat) - 1.0).abs() < 1e-12);
        let ramp = NormalizedCurve { t: normalized_time(101), p_hat: normalized_time(101) };
        assert!((convergence_score(&ramp) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn table_three_cells() {
        let cells = [
            (901, 7.33, 110.0),
            (901, 2.48, 37.0),
            (901, 29.94, 450.0),
            (172, 8.52, 24.0),
            (172, 3.33, 10.0),
            (172, 208.0, 596.0),
            (97, 7.12, 12.0),
            (97, 3.36, 5.0),
            (97, 28.33, 46.0),
        ];
        for (reuses, latency, minutes) in cells {
            let ledger = TimeLedger { reuse_count: reuses, latencies: vec![latency], ..TimeLedger::default() };
            let saved = saved_time_minutes(&ledger).unwrap();
            assert!((saved - minutes).abs() <= 1.0, "{reuses} x {latency}: {saved}");
        }
        let ledger = TimeLedger { reuse_count: 901, latencies: vec![7.33], ..TimeLedger::default() };
        assert!((saved_time_minutes(&ledger).unwrap() - 110.07).abs() < 0.005);
    }

    #[test]
    fn ledger_edge_cases() {
        assert_eq!(saved_time_minutes(&TimeLedger::default()), Ok(0.0));
        let ledger = TimeLedger { reuse_count: 2, ..TimeLedger::default() };
        assert_eq!(saved_time_minutes(&ledger), Err(MetricsError::EmptyLedger));
    }

    #[test]
    fn per_event_sum_agrees_for_constant_latency() {
        let ledger = TimeLedger { reuse_count: 40, latencies: vec![0.5; 13], fresh_query_count: 13, reuse_latencies: vec![0.5; 40] };
        assert!((saved_time_minutes(&ledger).unwrap() - saved_time_minutes_per_event(&ledger)).abs() < 1e-12);
    }

    #[test]
    fn pearson_perfect_lines() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let down: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &up).unwrap().r - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &down).unwrap().r + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[8.0, 13.0], &[0.4, 0.6]).unwrap().r, 1.0);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(MetricsError::ZeroVariance));
        assert!(matches!(pearson(&[1.0], &[2.0]), Err(MetricsError::BadLength(_))));
    }

    #[test]
    fn pearson_matches_direct_formula() {
        let xs = [0.31, 1.7, -0.4, 2.2, 0.05, 1.1, -1.3, 0.9, 0.66, 1.45];
        let ys = [1.2, 2.9, 0.1, 3.8, 0.7, 1.6, -0.9, 2.0, 0.2, 2.4];
        let n = xs.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let (mx, my) = (mean(&xs), mean(&ys));
        let cov = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0);
        let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sy = (ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((pearson(&xs, &ys).unwrap().r - cov / (sx * sy)).abs() < 1e-12);
    }

    #[test]
    fn pearson_p_value_reference() {
        // r = 0.5 with n = 10: t = 1.63299, two-sided p = 0.14111 (t-table value).
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let p = pearson(&xs, &xs).unwrap();
        assert_eq!(p.p_value, Some(0.0));
        let r: f64 = 0.5;
        let t = r * (8.0 / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, 8.0).unwrap();
        assert!((2.0 * (1.0 - dist.cdf(t)) - 0.14111).abs() < 1e-4);
    }

    #[test]
    fn smoothing_examples() {
        let v = [0.3, -1.0, 2.5, 4.0];
        assert_eq!(smooth_for_plot(&v, 1).unwrap(), v.to_vec());
        assert_eq!(smooth_for_plot(&[2.0; 6], 5).unwrap(), vec![2.0; 6]);
        let impulse = smooth_for_plot(&[0.0, 0.0, 1.0, 0.0, 0.0], 3).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(impulse, vec![0.0, third, third, third, 0.0]);
        assert_eq!(smooth_for_plot(&v, 2), Err(MetricsError::BadWindow(2)));
        assert_eq!(smooth_for_plot(&v, 0), Err(MetricsError::BadWindow(0)));
    }

    #[test]
    fn run_csv_layout() {
        let raw = [1.0, 3.0];
        let norm = normalize_set(&[raw.to_vec()]).unwrap().remove(0);
        let mut buf = Vec::new();
        write_run_csv(&mut buf, &raw, &raw, &norm).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "episode_index,raw_return,smoothed_return,t_normalized,p_hat\n0,1,1,0,0\n1,3,3,1,1\n");
    }

    /// Riemann sum of the piecewise-linear interpolant at ten times the resolution.
    fn riemann_oracle(p: &[f64]) -> f64 {
        let n = p.len();
        let steps = (n - 1) * 10;
        let h = 1.0 / steps as f64;
        (0..steps)
            .map(|k| {
                let mid = (k as f64 + 0.5) * h * (n - 1) as f64;
                let i = (mid.floor() as usize).min(n - 2);
                let frac = mid - i as f64;
                (p[i] + frac * (p[i + 1] - p[i])) * h
            })
            .sum()
    }

    proptest! {
        #[test]
        fn score_matches_riemann_oracle(v in proptest::collection::vec(-50.0f64..50.0, 2..300)) {
            prop_assume!(v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) > v.iter().cloned().fold(f64::INFINITY, f64::min));
            let curve = normalize_set(&[v]).unwrap().remove(0);
            let score = convergence_score(&curve);
            prop_assert!((score - riemann_oracle(&curve.p_hat)).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&score));
        }

        #[test]
        fn affine_maps_preserve_scores(
            a in proptest::collection::vec(-10.0f64..10.0, 2..50),
            b in proptest::collection::vec(-10.0f64..10.0, 2..50),
            scale in 0.01f64..100.0,
            shift in -100.0f64..100.0,
        ) {
            let base = score_set(&[a.clone(), b.clone()]);
            prop_assume!(base.is_ok());
            let map = |v: &[f64]| v.iter().map(|x| scale * x + shift).collect::<Vec<_>>();
            let moved = score_set(&[map(&a), map(&b)]).unwrap();
            for (x, y) in base.unwrap().iter().zip(&moved) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn doubling_resolution_keeps_score(p in proptest::collection::vec(0.0f64..1.0, 2..200)) {
            let coarse = NormalizedCurve { t: normalized_time(p.len()), p_hat: p.clone() };
            let mut fine = Vec::with_capacity(2 * p.len() - 1);
            for w in p.windows(2) {
                fine.push(w[0]);
                fine.push((w[0] + w[1]) / 2.0);
            }
            fine.push(*p.last().unwrap());
            let fine = NormalizedCurve { t: normalized_time(fine.len()), p_hat: fine };
            prop_assert!((convergence_score(&coarse) - convergence_score(&fine)).abs() <= 1e-12);
        }

        #[test]
        fn pearson_is_bounded(v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40)) {
            let (xs, ys): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            if let Ok(p) = pearson(&xs, &ys) {
                prop_assert!((-1.0..=1.0).contains(&p.r));
                let pv = p.p_value.unwrap();
                prop_assert!((0.0..=1.0).contains(&pv));
            }
        }
    }
}
