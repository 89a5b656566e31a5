//! Spatially correlated log-normal shadowing.
//!
//! For a single AP the shadowing values at two locations separated by `d`
//! have covariance `σ_SF² · 2^(−d / d_corr)`; different APs are independent.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{Point2, Scenario};
use crate::linalg::cholesky_with_jitter;

const JITTER: f64 = 1e-10;
const JITTER_ESCALATIONS: u32 = 3;

/// Covariance of the shadowing (dB²) between two locations `distance_m` apart.
pub fn shadow_covariance(distance_m: f64, sigma_db: f64, decorr_dist_m: f64) -> f64 {
    sigma_db * sigma_db * (-distance_m / decorr_dist_m).exp2()
}

fn correlation_matrix(points: &[Point2], decorr_dist_m: f64) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| {
        shadow_covariance(points[i].distance(&points[j]), 1.0, decorr_dist_m)
    })
}

fn factorize(corr: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    cholesky_with_jitter(corr, JITTER, JITTER_ESCALATIONS)
        .map(|(c, _)| c)
        .ok_or_else(|| Error::Numeric("shadowing covariance is not positive definite".into()))
}

/// Shadowing realization (dB) for every RP plus one test point, per AP.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowField {
    /// `(K + 1) × L`; rows are the RPs in scenario order followed by the
    /// test point, columns are APs.
    pub values_db: DMatrix<f64>,
}

impl ShadowField {
    pub fn rp(&self, rp: usize, ap: usize) -> f64 {
        self.values_db[(rp, ap)]
    }

    pub fn test_point(&self, ap: usize) -> f64 {
        self.values_db[(self.values_db.nrows() - 1, ap)]
    }
}

/// Draws one joint shadowing field over the RPs and `test_point`, with an
/// independent column per AP.
pub fn sample_shadow_field<R: Rng + ?Sized>(
    scenario: &Scenario,
    test_point: &Point2,
    rng: &mut R,
) -> Result<ShadowField> {
    let cfg = &scenario.config;
    let mut points = scenario.rp_positions.clone();
    points.push(*test_point);
    let n = points.len();
    let l = scenario.num_aps();
    if cfg.shadow_sigma_db == 0.0 {
        return Ok(ShadowField { values_db: DMatrix::zeros(n, l) });
    }
    let chol = factorize(&correlation_matrix(&points, cfg.decorr_dist_m))?;
    let lower = chol.l();
    let mut values = DMatrix::zeros(n, l);
    for ap in 0..l {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let draw = &lower * z * cfg.shadow_sigma_db;
        values.set_column(ap, &draw);
    }
    Ok(ShadowField { values_db: values })
}

/// Per-test-point kriging weights for drawing the test-point shadowing
/// conditionally on an RP field.
#[derive(Debug, Clone)]
pub struct ConditionalWeights {
    weights: DVector<f64>,
    /// Conditional variance in correlation units (multiply by σ_SF²).
    residual_var: f64,
}

/// Samples shadowing over a fixed RP grid, then conditionally at test
/// points. Sampling the RPs and then the test point from its conditional law
/// gives the same joint distribution as [`sample_shadow_field`], but the RP
/// factorization is computed once per deployment.
#[derive(Debug, Clone)]
pub struct ShadowSampler {
    rp_positions: Vec<Point2>,
    sigma_db: f64,
    decorr_dist_m: f64,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl ShadowSampler {
    pub fn new(rp_positions: &[Point2], sigma_db: f64, decorr_dist_m: f64) -> Result<Self> {
        let chol = if sigma_db > 0.0 {
            Some(factorize(&correlation_matrix(rp_positions, decorr_dist_m))?)
        } else {
            None
        };
        Ok(Self {
            rp_positions: rp_positions.to_vec(),
            sigma_db,
            decorr_dist_m,
            chol,
        })
    }

    /// Shadowing (dB) at every RP for one AP.
    pub fn sample_rp_field<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let k = self.rp_positions.len();
        match &self.chol {
            None => DVector::zeros(k),
            Some(c) => {
                let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
                c.l() * z * self.sigma_db
            }
        }
    }

    pub fn conditional_weights(&self, test_point: &Point2) -> ConditionalWeights {
        let Some(chol) = &self.chol else {
            return ConditionalWeights {
                weights: DVector::zeros(self.rp_positions.len()),
                residual_var: 0.0,
            };
        };
        let cross = DVector::from_iterator(
            self.rp_positions.len(),
            self.rp_positions
                .iter()
                .map(|p| shadow_covariance(p.distance(test_point), 1.0, self.decorr_dist_m)),
        );
        let weights = chol.solve(&cross);
        let residual_var = (1.0 - cross.dot(&weights)).max(0.0);
        ConditionalWeights { weights, residual_var }
    }

    /// Test-point shadowing for one AP given that AP's RP field.
    pub fn sample_test_point<R: Rng + ?Sized>(
        &self,
        weights: &ConditionalWeights,
        rp_field: &DVector<f64>,
        rng: &mut R,
    ) -> f64 {
        if self.chol.is_none() {
            return 0.0;
        }
        let z: f64 = rng.sample(StandardNormal);
        weights.weights.dot(rp_field) + self.sigma_db * weights.residual_var.sqrt() * z
    }
}
