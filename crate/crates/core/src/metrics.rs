//! Localization error, 95% error ellipses and the per-trial CSV record.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::gpr::PositionEstimate;

/// 95% quantile of the chi-square distribution with two degrees of freedom.
pub const CHI2_2DOF_95: f64 = 5.991;

pub const TRIAL_HEADER: &str =
    "setup_id,test_id,method,true_x,true_y,est_x,est_y,var_x,var_y,err_m,ellipse_area_m2,covered";

/// Euclidean distance between the true and estimated positions (m).
pub fn localization_error(truth: &Point2, estimate: &[f64; 2]) -> f64 {
    (truth.x - estimate[0]).hypot(truth.y - estimate[1])
}

/// Area of the 95% ellipse, `5.991 π √(v₁ v₂)`.
pub fn ellipse_area(var: [f64; 2]) -> Result<f64> {
    if var.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("ellipse variances must be positive, got {var:?}")));
    }
    Ok(CHI2_2DOF_95 * std::f64::consts::PI * (var[0] * var[1]).sqrt())
}

/// Whether `truth` lies inside or on the 95% ellipse of `est`.
pub fn ellipse_covers(truth: &Point2, est: &PositionEstimate) -> bool {
    let dx = truth.x - est.mean[0];
    let dy = truth.y - est.mean[1];
    dx * dx / (CHI2_2DOF_95 * est.var[0]) + dy * dy / (CHI2_2DOF_95 * est.var[1]) <= 1.0
}

/// One (setup, test point, method) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub setup_id: u64,
    pub test_id: u64,
    pub method: String,
    pub true_x: f64,
    pub true_y: f64,
    pub est_x: f64,
    pub est_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub err_m: f64,
    pub ellipse_area_m2: f64,
    pub covered: bool,
}

impl TrialRecord {
    pub fn new(setup_id: u64, test_id: u64, method: &str, truth: &Point2, est: &PositionEstimate) -> Result<Self> {
        Ok(Self {
            setup_id,
            test_id,
            method: method.to_string(),
            true_x: truth.x,
            true_y: truth.y,
            est_x: est.mean[0],
            est_y: est.mean[1],
            var_x: est.var[0],
            var_y: est.var[1],
            err_m: localization_error(truth, &est.mean),
            ellipse_area_m2: ellipse_area(est.var)?,
            covered: ellipse_covers(truth, est),
        })
    }

    /// Ordering key used before writing, so output bytes never depend on
    /// scheduling.
    pub fn sort_key(&self) -> (u64, u64, &str) {
        (self.setup_id, self.test_id, &self.method)
    }
}

pub fn write_trials<W: Write>(writer: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(TRIAL_HEADER.split(','))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a trial CSV; errors carry the 1-based file line.
pub fn read_trials<R: Read>(reader: R) -> Result<Vec<TrialRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != TRIAL_HEADER {
        return Err(Error::Parse { line: 1, reason: format!("unexpected header {:?}", header.join(",")) });
    }
    let mut out = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        out.push(rec.map_err(|e: csv::Error| Error::Parse { line: i + 2, reason: e.to_string() })?);
    }
    Ok(out)
}
