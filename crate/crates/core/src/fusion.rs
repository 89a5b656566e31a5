//! UE-side fusion of per-AP position estimates.
//!
//! Every fuser treats the two coordinates independently.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::{EstimateSource, PositionEstimate};

/// Default z-score retention threshold.
pub const DEFAULT_ZSCORE_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    Median,
    Mean,
    Bayesian,
    #[serde(rename = "zscore")]
    ZScore,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 4] = [Self::Median, Self::Mean, Self::Bayesian, Self::ZScore];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Median => "median",
            Self::Mean => "mean",
            Self::Bayesian => "bayesian",
            Self::ZScore => "zscore",
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config("fusion", format!("unknown fusion method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub estimate: PositionEstimate,
    /// Per coordinate, the AP indices (into the input slice) that determined
    /// the result. Never empty.
    pub retained: [Vec<usize>; 2],
    pub method: FusionMethod,
}

fn check(estimates: &[PositionEstimate]) -> Result<()> {
    if estimates.is_empty() {
        return Err(Error::Domain("fusion needs at least one estimate".into()));
    }
    for (i, e) in estimates.iter().enumerate() {
        if e.var.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || e.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Domain(format!("estimate {i} has invalid mean or variance: {e:?}")));
        }
    }
    Ok(())
}

fn assemble(method: FusionMethod, per_coord: [(f64, f64, Vec<usize>); 2]) -> FusionResult {
    let [(mx, vx, rx), (my, vy, ry)] = per_coord;
    FusionResult {
        estimate: PositionEstimate {
            mean: [mx, my],
            var: [vx, vy],
            source: EstimateSource::Method(method.as_str().to_string()),
        },
        retained: [rx, ry],
        method,
    }
}

fn median_coord(estimates: &[PositionEstimate], c: usize) -> (f64, f64, Vec<usize>) {
    let l = estimates.len();
    let mut means: Vec<f64> = estimates.iter().map(|e| e.mean[c]).collect();
    means.sort_by(f64::total_cmp);
    // First matching index wins among duplicates.
    let first = |value: f64, skip: Option<usize>| {
        estimates
            .iter()
            .enumerate()
            .position(|(i, e)| e.mean[c] == value && Some(i) != skip)
            .expect("median value comes from the inputs")
    };
    if l % 2 == 1 {
        let i = first(means[l / 2], None);
        (estimates[i].mean[c], estimates[i].var[c], vec![i])
    } else {
        let i = first(means[l / 2 - 1], None);
        let j = first(means[l / 2], Some(i));
        let m = 0.5 * (estimates[i].mean[c] + estimates[j].mean[c]);
        let v = (estimates[i].var[c] + estimates[j].var[c]) / 4.0;
        (m, v, vec![i, j])
    }
}

/// Per-coordinate median of the AP means.
///
/// Odd `L` keeps the variance of the selected AP; even `L` averages the two
/// middle means and reports `(v₁ + v₂)/4`.
pub fn fuse_median(estimates: &[PositionEstimate]) -> Result<FusionResult> {
    check(estimates)?;
    Ok(assemble(
        FusionMethod::Median,
        [median_coord(estimates, 0), median_coord(estimates, 1)],
    ))
}

fn mean_over(estimates: &[PositionEstimate], idx: &[usize], c: usize) -> (f64, f64) {
    let l = idx.len() as f64;
    let m = idx.iter().map(|&i| estimates[i].mean[c]).sum::<f64>() / l;
    let v = idx.iter().map(|&i| estimates[i].var[c]).sum::<f64>() / (l * l);
    (m, v)
}

fn bayes_over(estimates: &[PositionEstimate], idx: &[usize], c: usize) -> (f64, f64) {
    let precision: f64 = idx.iter().map(|&i| 1.0 / estimates[i].var[c]).sum();
    let v = 1.0 / precision;
    let m = v * idx.iter().map(|&i| estimates[i].mean[c] / estimates[i].var[c]).sum::<f64>();
    (m, v)
}

/// Arithmetic mean of the AP means; variance `Σv / L²`.
pub fn fuse_mean(estimates: &[PositionEstimate]) -> Result<FusionResult> {
    check(estimates)?;
    let all: Vec<usize> = (0..estimates.len()).collect();
    let coord = |c| {
        let (m, v) = mean_over(estimates, &all, c);
        (m, v, all.clone())
    };
    Ok(assemble(FusionMethod::Mean, [coord(0), coord(1)]))
}

/// Precision-weighted fusion: `v = (Σ 1/v_ℓ)⁻¹`, `μ = v Σ μ_ℓ/v_ℓ`.
pub fn fuse_bayesian(estimates: &[PositionEstimate]) -> Result<FusionResult> {
    check(estimates)?;
    let all: Vec<usize> = (0..estimates.len()).collect();
    let coord = |c| {
        let (m, v) = bayes_over(estimates, &all, c);
        (m, v, all.clone())
    };
    Ok(assemble(FusionMethod::Bayesian, [coord(0), coord(1)]))
}

/// Indices whose mean has `|z| < threshold` (population std). Returns every
/// index when the std is zero or nothing survives.
pub fn zscore_retained(means: &[f64], threshold: f64) -> Vec<usize> {
    let l = means.len() as f64;
    let mu = means.iter().sum::<f64>() / l;
    let sd = (means.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>() / l).sqrt();
    let all = || (0..means.len()).collect();
    if !(sd > 0.0) {
        return all();
    }
    // Scores within rounding of the threshold count as on it (not retained),
    // so the retained set does not depend on where the means sit.
    let cut = threshold * (1.0 - 1e-9);
    let kept: Vec<usize> = (0..means.len())
        .filter(|&i| ((means[i] - mu) / sd).abs() < cut)
        .collect();
    if kept.is_empty() {
        all()
    } else {
        kept
    }
}

/// Drops APs whose mean is a z-score outlier, then fuses the rest
/// precision-weighted.
pub fn fuse_zscore(estimates: &[PositionEstimate], threshold: f64) -> Result<FusionResult> {
    check(estimates)?;
    if !(threshold > 0.0) {
        return Err(Error::config("zscore_threshold", "must be positive"));
    }
    let coord = |c: usize| {
        let means: Vec<f64> = estimates.iter().map(|e| e.mean[c]).collect();
        let kept = zscore_retained(&means, threshold);
        let (m, v) = bayes_over(estimates, &kept, c);
        (m, v, kept)
    };
    Ok(assemble(FusionMethod::ZScore, [coord(0), coord(1)]))
}

pub fn fuse(method: FusionMethod, estimates: &[PositionEstimate], zscore_threshold: f64) -> Result<FusionResult> {
    match method {
        FusionMethod::Median => fuse_median(estimates),
        FusionMethod::Mean => fuse_mean(estimates),
        FusionMethod::Bayesian => fuse_bayesian(estimates),
        FusionMethod::ZScore => fuse_zscore(estimates, zscore_threshold),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn est(mx: f64, vx: f64, my: f64, vy: f64) -> PositionEstimate {
        PositionEstimate { mean: [mx, my], var: [vx, vy], source: EstimateSource::Ap(0) }
    }

    fn xs(means: &[f64], vars: &[f64]) -> Vec<PositionEstimate> {
        means.iter().zip(vars).map(|(&m, &v)| est(m, v, 0.0, 1.0)).collect()
    }

    #[test]
    fn median_odd_and_even() {
        let r = fuse_median(&xs(&[1.0, 5.0, 3.0], &[9.0, 1.0, 4.0])).unwrap();
        assert_eq!((r.estimate.mean[0], r.estimate.var[0]), (3.0, 4.0));
        assert_eq!(r.retained[0], vec![2]);
        let r = fuse_median(&xs(&[0.0, 2.0, 4.0, 6.0], &[1.0, 2.0, 6.0, 1.0])).unwrap();
        assert_eq!((r.estimate.mean[0], r.estimate.var[0]), (3.0, 2.0));
    }

    #[test]
    fn median_duplicates_pick_first_index() {
        let r = fuse_median(&xs(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(r.retained[0], vec![0]);
        assert_eq!(r.estimate.var[0], 1.0);
        let r = fuse_median(&xs(&[2.0, 2.0], &[1.0, 3.0])).unwrap();
        assert_eq!(r.retained[0], vec![0, 1]);
        assert_eq!(r.estimate.var[0], 1.0);
    }

    #[test]
    fn single_estimate_passthrough() {
        let e = vec![est(4.0, 2.0, -1.0, 3.0)];
        for m in FusionMethod::ALL {
            let r = fuse(m, &e, 1.0).unwrap();
            assert_eq!(r.estimate.mean, e[0].mean);
            assert_eq!(r.estimate.var, e[0].var);
        }
    }

    #[test]
    fn mean_and_bayes_examples() {
        let r = fuse_mean(&xs(&[0.0, 2.0], &[1.0, 1.0])).unwrap();
        assert_eq!((r.estimate.mean[0], r.estimate.var[0]), (1.0, 0.5));
        let r = fuse_bayesian(&xs(&[3.0, 3.0], &[2.0, 2.0])).unwrap();
        assert_eq!((r.estimate.mean[0], r.estimate.var[0]), (3.0, 1.0));
        let r = fuse_bayesian(&xs(&[0.0, 10.0], &[1.0, 1e6])).unwrap();
        let v = 1.0 / (1.0 + 1e-6);
        assert!((r.estimate.var[0] - v).abs() < 1e-15);
        assert!((r.estimate.mean[0] - v * 10.0 / 1e6).abs() < 1e-15);
    }

    #[test]
    fn zscore_filters_outlier() {
        let e = xs(&[0.0, 0.1, -0.1, 50.0], &[1.0; 4]);
        let r = fuse_zscore(&e, 1.0).unwrap();
        assert_eq!(r.retained[0], vec![0, 1, 2]);
        assert!(r.estimate.mean[0].abs() < 1e-12);
        assert!((r.estimate.var[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zscore_degenerate_equals_bayes() {
        let e = xs(&[7.0, 7.0, 7.0], &[1.0, 2.0, 4.0]);
        assert_eq!(
            fuse_zscore(&e, 1.0).unwrap().estimate,
            PositionEstimate { source: EstimateSource::Method("zscore".into()), ..fuse_bayesian(&e).unwrap().estimate }
        );
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(fuse_mean(&[]).is_err());
        assert!(fuse_bayesian(&xs(&[1.0], &[0.0])).is_err());
        assert!(fuse_zscore(&xs(&[1.0, 2.0], &[1.0, 1.0]), 0.0).is_err());
        assert_eq!("zscore".parse::<FusionMethod>().unwrap(), FusionMethod::ZScore);
        assert!("mode".parse::<FusionMethod>().is_err());
    }

    fn estimates_strategy() -> impl Strategy<Value = Vec<PositionEstimate>> {
        prop::collection::vec(
            (-100.0..300.0f64, 1e-3..1e4f64, -100.0..300.0f64, 1e-3..1e4f64)
                .prop_map(|(a, b, c, d)| est(a, b, c, d)),
            1..12,
        )
    }

    proptest! {
        #[test]
        fn permutation_invariance(e in estimates_strategy(), seed in any::<u64>()) {
            let mut p = e.clone();
            let n = p.len();
            // Deterministic shuffle by rotation and reversal.
            p.rotate_left((seed as usize) % n);
            if seed % 2 == 0 { p.reverse(); }
            for m in FusionMethod::ALL {
                let a = fuse(m, &e, 1.0).unwrap().estimate;
                let b = fuse(m, &p, 1.0).unwrap().estimate;
                for c in 0..2 {
                    prop_assert!((a.mean[c] - b.mean[c]).abs() <= 1e-9 * (1.0 + a.mean[c].abs()));
                    prop_assert!((a.var[c] - b.var[c]).abs() <= 1e-9 * a.var[c]);
                }
            }
        }

        #[test]
        fn translation_equivariance(e in estimates_strategy(), off in -50.0..50.0f64) {
            let shifted: Vec<_> = e.iter().map(|x| est(x.mean[0] + off, x.var[0], x.mean[1] + off, x.var[1])).collect();
            for m in FusionMethod::ALL {
                let a = fuse(m, &e, 1.0).unwrap();
                let b = fuse(m, &shifted, 1.0).unwrap();
                for c in 0..2 {
                    prop_assert!((a.estimate.mean[c] + off - b.estimate.mean[c]).abs() < 1e-8);
                    prop_assert!((a.estimate.var[c] - b.estimate.var[c]).abs() <= 1e-9 * a.estimate.var[c]);
                }
                if m == FusionMethod::ZScore {
                    prop_assert_eq!(&a.retained, &b.retained);
                }
            }
        }

        #[test]
        fn variance_ordering(e in estimates_strategy(), t in 0.1..3.0f64) {
            let db = fuse_bayesian(&e).unwrap().estimate.var;
            let dm = fuse_mean(&e).unwrap().estimate.var;
            let dz = fuse_zscore(&e, t).unwrap();
            for c in 0..2 {
                prop_assert!(db[c] <= dm[c] * (1.0 + 1e-12));
                prop_assert!(db[c] <= dz.estimate.var[c] * (1.0 + 1e-12));
                prop_assert!(db[c] <= e.iter().map(|x| x.var[c]).fold(f64::INFINITY, f64::min) * (1.0 + 1e-12));
                prop_assert!(!dz.retained[c].is_empty());
            }
        }

        #[test]
        fn large_threshold_is_bayes(e in estimates_strategy()) {
            let a = fuse_bayesian(&e).unwrap().estimate;
            let b = fuse_zscore(&e, 1e9).unwrap().estimate;
            prop_assert_eq!(a.mean, b.mean);
            prop_assert_eq!(a.var, b.var);
        }

        #[test]
        fn mean_variance_is_average_over_l(e in estimates_strategy()) {
            let r = fuse_mean(&e).unwrap().estimate;
            let l = e.len() as f64;
            for c in 0..2 {
                let avg = e.iter().map(|x| x.var[c]).sum::<f64>() / l;
                prop_assert!((r.var[c] - avg / l).abs() <= 1e-12 * avg);
            }
        }
    }
}
