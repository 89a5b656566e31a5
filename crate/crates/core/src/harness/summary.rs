//! Per-method aggregation of trial records.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::TrialRecord;

/// Error quantiles reported for CDF plots.
pub const QUANTILES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

pub const SUMMARY_HEADER: [&str; 16] = [
    "sweep_value",
    "method",
    "num_trials",
    "mean_err_m",
    "mean_ellipse_area_m2",
    "coverage_pct",
    "p10",
    "p20",
    "p30",
    "p40",
    "p50",
    "p60",
    "p70",
    "p80",
    "p90",
    "runtime_s",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub sweep_value: Option<f64>,
    pub method: String,
    pub num_trials: usize,
    pub mean_err_m: f64,
    pub mean_ellipse_area_m2: f64,
    /// In [0, 100].
    pub coverage_pct: f64,
    /// Error quantiles at [`QUANTILES`].
    pub err_quantiles: [f64; 9],
    pub runtime_s: Option<f64>,
}

/// Quantile with linear interpolation between order statistics
/// (`h = (n − 1) p`). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One row per method, ordered by method tag.
pub fn summarize(records: &[TrialRecord], sweep_value: Option<f64>, runtime_s: Option<f64>) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.method.as_str()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(method, rows)| {
            let n = rows.len() as f64;
            let mut errs: Vec<f64> = rows.iter().map(|r| r.err_m).collect();
            errs.sort_by(f64::total_cmp);
            SummaryRow {
                sweep_value,
                method: method.to_string(),
                num_trials: rows.len(),
                mean_err_m: errs.iter().sum::<f64>() / n,
                mean_ellipse_area_m2: rows.iter().map(|r| r.ellipse_area_m2).sum::<f64>() / n,
                coverage_pct: 100.0 * rows.iter().filter(|r| r.covered).count() as f64 / n,
                err_quantiles: QUANTILES.map(|p| quantile_sorted(&errs, p)),
                runtime_s,
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_summary<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        if !(0.0..=100.0).contains(&r.coverage_pct) {
            return Err(Error::Numeric(format!("coverage {} outside [0, 100]", r.coverage_pct)));
        }
        let mut rec = vec![
            opt(r.sweep_value),
            r.method.clone(),
            r.num_trials.to_string(),
            r.mean_err_m.to_string(),
            r.mean_ellipse_area_m2.to_string(),
            r.coverage_pct.to_string(),
        ];
        rec.extend(r.err_quantiles.iter().map(f64::to_string));
        rec.push(opt(r.runtime_s));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
