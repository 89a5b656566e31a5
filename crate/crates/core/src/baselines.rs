//! Comparison methods: centralized GPR over all APs' fingerprints, KNN and
//! linear regression, both centralized and per AP with median fusion.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{FingerprintDb, TestObservation};
use crate::fusion::{fuse_median, FusionMethod, FusionResult};
use crate::gpr::{CoordinateModels, EstimateSource, InputScaler, PositionEstimate, TrainConfig, VAR_FLOOR};

/// Default number of KNN neighbours.
pub const DEFAULT_KNN_K: usize = 4;

/// Which features the CPU-side model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CentralVariant {
    /// `[ξ₁..ξ_L, Φ₁..Φ_L]`.
    Hybrid,
    Rss,
    Aoa,
}

impl CentralVariant {
    pub fn input_width(&self, num_aps: usize) -> usize {
        match self {
            Self::Hybrid => 2 * num_aps,
            Self::Rss | Self::Aoa => num_aps,
        }
    }
}

/// Fingerprints of all APs stacked column-wise at the CPU.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralFingerprintDb {
    pub variant: CentralVariant,
    pub inputs: DMatrix<f64>,
    pub targets: [DVector<f64>; 2],
}

impl CentralFingerprintDb {
    /// Stacks per-AP databases, ordered by position in `dbs`.
    pub fn from_aps(dbs: &[FingerprintDb], variant: CentralVariant) -> Result<Self> {
        let first = dbs.first().ok_or_else(|| Error::Domain("no AP databases".into()))?;
        let k = first.len();
        if dbs.iter().any(|d| d.len() != k || d.rp_positions != first.rp_positions) {
            return Err(Error::Domain("AP databases disagree on the RP set".into()));
        }
        let l = dbs.len();
        let inputs = DMatrix::from_fn(k, variant.input_width(l), |r, c| match variant {
            CentralVariant::Hybrid if c < l => dbs[c].rss_db[r],
            CentralVariant::Hybrid => dbs[c - l].aoa_deg[r],
            CentralVariant::Rss => dbs[c].rss_db[r],
            CentralVariant::Aoa => dbs[c].aoa_deg[r],
        });
        Ok(Self { variant, inputs, targets: [first.targets(0), first.targets(1)] })
    }

    /// Online feature vector in the same column order.
    pub fn test_input(&self, observations: &[TestObservation]) -> Vec<f64> {
        match self.variant {
            CentralVariant::Hybrid => observations
                .iter()
                .map(|o| o.rss_db)
                .chain(observations.iter().map(|o| o.aoa_deg))
                .collect(),
            CentralVariant::Rss => observations.iter().map(|o| o.rss_db).collect(),
            CentralVariant::Aoa => observations.iter().map(|o| o.aoa_deg).collect(),
        }
    }
}

pub fn fit_centralized_gpr(db: &CentralFingerprintDb, cfg: &TrainConfig) -> Result<CoordinateModels> {
    CoordinateModels::fit(&db.inputs, &db.targets[0], &db.targets[1], cfg)
}

/// Anything that maps one feature vector to a Gaussian position estimate.
pub trait Regressor {
    fn predict(&self, input: &[f64], source: EstimateSource) -> Result<PositionEstimate>;
}

impl Regressor for CoordinateModels {
    fn predict(&self, input: &[f64], source: EstimateSource) -> Result<PositionEstimate> {
        CoordinateModels::predict(self, input, source)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KnnWeighting {
    InverseDistance,
    Uniform,
}

/// k-nearest neighbours in z-scored input space.
#[derive(Debug, Clone)]
pub struct KnnRegressor {
    scaler: InputScaler,
    inputs: DMatrix<f64>,
    targets: [DVector<f64>; 2],
    k: usize,
    weighting: KnnWeighting,
}

impl KnnRegressor {
    pub fn fit(
        inputs: &DMatrix<f64>,
        targets: [DVector<f64>; 2],
        k: usize,
        weighting: KnnWeighting,
    ) -> Result<Self> {
        if k == 0 || inputs.nrows() < k {
            return Err(Error::Domain(format!("KNN needs 1 ≤ k ≤ K, got k = {k}, K = {}", inputs.nrows())));
        }
        if targets.iter().any(|t| t.len() != inputs.nrows()) {
            return Err(Error::Domain("KNN targets do not match inputs".into()));
        }
        let scaler = InputScaler::fit(inputs);
        Ok(Self { inputs: scaler.transform_matrix(inputs), scaler, targets, k, weighting })
    }

    /// Indices and distances of the k nearest training points, ties broken by
    /// index.
    pub fn neighbours(&self, input: &[f64]) -> Result<Vec<(usize, f64)>> {
        if input.len() != self.scaler.dim() {
            return Err(Error::Domain(format!(
                "test input has {} features, KNN expects {}",
                input.len(),
                self.scaler.dim()
            )));
        }
        let z = self.scaler.transform(input);
        let mut d: Vec<(usize, f64)> = (0..self.inputs.nrows())
            .map(|i| {
                let d2: f64 = self.inputs.row(i).iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                (i, d2.sqrt())
            })
            .collect();
        d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        d.truncate(self.k);
        Ok(d)
    }
}

impl Regressor for KnnRegressor {
    fn predict(&self, input: &[f64], source: EstimateSource) -> Result<PositionEstimate> {
        let nb = self.neighbours(input)?;
        let exact = nb.iter().any(|(_, d)| *d == 0.0);
        let weights: Vec<f64> = nb
            .iter()
            .map(|(_, d)| match self.weighting {
                KnnWeighting::Uniform => 1.0,
                // Exact matches take all the weight.
                KnnWeighting::InverseDistance if exact => f64::from(u8::from(*d == 0.0)),
                KnnWeighting::InverseDistance => 1.0 / d,
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut mean = [0.0; 2];
        let mut var = [0.0; 2];
        for c in 0..2 {
            let t = &self.targets[c];
            mean[c] = nb.iter().zip(&weights).map(|((i, _), w)| w * t[*i]).sum::<f64>() / total;
            let v = nb.iter().zip(&weights).map(|((i, _), w)| w * (t[*i] - mean[c]).powi(2)).sum::<f64>() / total;
            var[c] = v.max(VAR_FLOOR);
        }
        Ok(PositionEstimate { mean, var, source })
    }
}

/// Ordinary least squares with intercept, one coefficient vector per
/// coordinate.
#[derive(Debug, Clone)]
pub struct LinearRegressor {
    /// `[intercept, w₁..w_D]` per coordinate.
    pub coefficients: [DVector<f64>; 2],
    pub residual_var: [f64; 2],
    pub ridge_used: bool,
}

fn design(inputs: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(inputs.nrows(), inputs.ncols() + 1, |r, c| if c == 0 { 1.0 } else { inputs[(r, c - 1)] })
}

impl LinearRegressor {
    /// QR least squares; a numerically rank-deficient design falls back to
    /// ridge with `λ = 1e−8 · tr(AᵀA)`.
    pub fn fit(inputs: &DMatrix<f64>, targets: [DVector<f64>; 2]) -> Result<Self> {
        let (k, d) = inputs.shape();
        if targets.iter().any(|t| t.len() != k) {
            return Err(Error::Domain("LR targets do not match inputs".into()));
        }
        if k == 0 {
            return Err(Error::Domain("LR needs training data".into()));
        }
        let a = design(inputs);
        let p = d + 1;
        let qr = a.clone().qr();
        let r = qr.r();
        let diag_max = (0..p.min(k)).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let full_rank = k >= p && (0..p).all(|i| r[(i, i)].abs() > 1e-10 * diag_max);
        let solve = |y: &DVector<f64>| -> Result<DVector<f64>> {
            if full_rank {
                let qty = qr.q().transpose() * y;
                r.solve_upper_triangular(&qty)
                    .ok_or_else(|| Error::Numeric("singular R factor".into()))
            } else {
                let ata = a.transpose() * &a;
                let lambda = 1e-8 * ata.trace().max(f64::MIN_POSITIVE);
                let reg = ata + DMatrix::identity(p, p) * lambda;
                let chol = Cholesky::new(reg).ok_or_else(|| Error::Numeric("ridge system not SPD".into()))?;
                Ok(chol.solve(&(a.transpose() * y)))
            }
        };
        let coefficients = [solve(&targets[0])?, solve(&targets[1])?];
        let dof = k.saturating_sub(p).max(1) as f64;
        let residual_var = [0, 1].map(|c| {
            let res = &targets[c] - &a * &coefficients[c];
            (res.norm_squared() / dof).max(VAR_FLOOR)
        });
        Ok(Self { coefficients, residual_var, ridge_used: !full_rank })
    }
}

impl Regressor for LinearRegressor {
    fn predict(&self, input: &[f64], source: EstimateSource) -> Result<PositionEstimate> {
        let p = self.coefficients[0].len();
        if input.len() + 1 != p {
            return Err(Error::Domain(format!("test input has {} features, LR expects {}", input.len(), p - 1)));
        }
        let mean = [0, 1].map(|c| {
            let w = &self.coefficients[c];
            w[0] + input.iter().enumerate().map(|(i, v)| w[i + 1] * v).sum::<f64>()
        });
        Ok(PositionEstimate { mean, var: self.residual_var, source })
    }
}

/// Per-AP regressors on the 2-D hybrid fingerprint, fused by the median.
///
/// `models[i]` must belong to the AP of `observations[i]`.
pub fn distributed_median_with<R: Regressor>(
    models: &[R],
    observations: &[TestObservation],
) -> Result<FusionResult> {
    if models.len() != observations.len() {
        return Err(Error::Domain(format!(
            "{} models for {} observations",
            models.len(),
            observations.len()
        )));
    }
    let estimates = models
        .iter()
        .zip(observations)
        .map(|(m, o)| m.predict(&o.hybrid(), EstimateSource::Ap(o.ap_index)))
        .collect::<Result<Vec<_>>>()?;
    fuse_median(&estimates)
}

/// Algorithm families selectable in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    DistGpr,
    CentHybrid,
    CentRss,
    CentAoa,
    CentKnn,
    CentLr,
    DistKnn,
    DistLr,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Self::DistGpr,
        Self::CentHybrid,
        Self::CentRss,
        Self::CentAoa,
        Self::CentKnn,
        Self::CentLr,
        Self::DistKnn,
        Self::DistLr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::DistGpr => "dist_gpr",
            Self::CentHybrid => "cent_hybrid",
            Self::CentRss => "cent_rss",
            Self::CentAoa => "cent_aoa",
            Self::CentKnn => "cent_knn",
            Self::CentLr => "cent_lr",
            Self::DistKnn => "dist_knn",
            Self::DistLr => "dist_lr",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::config("methods", format!("unknown algorithm {s:?}")))
    }
}

/// One output row family. Distributed GPR yields one method per fusion rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    DistGpr(FusionMethod),
    Other(Algorithm),
}

impl Method {
    /// Expands a tag: `dist_gpr` gives all four fusion rules,
    /// `dist_gpr-<rule>` a single one.
    pub fn expand(tag: &str) -> Result<Vec<Method>> {
        if let Some(rule) = tag.strip_prefix("dist_gpr-") {
            return Ok(vec![Method::DistGpr(rule.parse()?)]);
        }
        Ok(match tag.parse::<Algorithm>()? {
            Algorithm::DistGpr => FusionMethod::ALL.into_iter().map(Method::DistGpr).collect(),
            other => vec![Method::Other(other)],
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            Self::DistGpr(_) => Algorithm::DistGpr,
            Self::Other(a) => *a,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DistGpr(m) => write!(f, "dist_gpr-{m}"),
            Self::Other(a) => f.write_str(a.as_str()),
        }
    }
}
