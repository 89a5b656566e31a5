//! Cramér-Rao bound for the AOA under the disk-scattering model.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bessel::bessel_j_orders;
use crate::channel::{disk_covariance, disk_scaling_matrix, disk_zeta, steering_vector, C64};
use crate::config::{ArrayModel, ScenarioConfig};
use crate::error::{Error, Result};
use crate::geometry::wrap_deg;

/// Default number of independent measurements behind one bound.
pub const DEFAULT_MEASUREMENTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrbConfig {
    pub num_antennas: usize,
    pub d_over_lambda: f64,
    pub angular_spread_deg: f64,
    pub tx_power_mw: f64,
    pub beta_linear: f64,
    pub noise_power_mw: f64,
    pub theta_deg: f64,
    /// `S_M ≥ 1`.
    pub num_measurements: usize,
}

impl CrbConfig {
    /// Bound for a link with gain `beta_linear` at angle `theta_deg`.
    pub fn for_link(config: &ScenarioConfig, beta_linear: f64, theta_deg: f64) -> Self {
        Self {
            num_antennas: config.num_antennas,
            d_over_lambda: config.antenna_spacing_wavelengths,
            angular_spread_deg: config.angular_spread_deg,
            tx_power_mw: config.tx_power_mw,
            beta_linear,
            noise_power_mw: config.noise_power_mw(),
            theta_deg,
            num_measurements: config.rss_samples,
        }
    }

    pub fn array_model(&self) -> ArrayModel {
        ArrayModel {
            num_antennas: self.num_antennas,
            d_over_lambda: self.d_over_lambda,
            angular_spread_deg: self.angular_spread_deg,
            tx_power_mw: self.tx_power_mw,
            noise_power_mw: self.noise_power_mw,
            pilot_length: 1,
        }
    }

    pub fn covariance(&self) -> DMatrix<C64> {
        disk_covariance(self.beta_linear, self.theta_deg, &self.array_model())
    }
}

/// `∂R/∂φ` with φ in radians.
pub fn covariance_derivative(cfg: &CrbConfig) -> DMatrix<C64> {
    let model = cfg.array_model();
    let n = cfg.num_antennas;
    let phi = cfg.theta_deg.to_radians();
    let spread = cfg.angular_spread_deg.to_radians();
    let zeta = disk_zeta(cfg.theta_deg, &model);
    let a = steering_vector(cfg.theta_deg, n, cfg.d_over_lambda);
    let g = disk_scaling_matrix(cfg.theta_deg, &model);
    let scale = cfg.tx_power_mw * cfg.beta_linear;
    let kd = 2.0 * PI * cfg.d_over_lambda;
    DMatrix::from_fn(n, n, |m, k| {
        let lag = m as f64 - k as f64;
        let aa = a[m] * a[k].conj();
        // d/dφ [a aᴴ]_mk, from ∂a_n/∂φ = j kd n sin φ a_n.
        let daa = aa * C64::new(0.0, kd * lag * phi.sin());
        // d/dx (J0 + J2) = −(J1 + J3)/2 and dζ/dφ = kd Δ cos φ.
        let j = bessel_j_orders(3, lag * zeta);
        let dg = -0.5 * kd * lag * spread * phi.cos() * (j[1] + j[3]);
        (aa * dg + daa * g[(m, k)]) * scale
    })
}

/// Fisher information `tr(R⁻¹ Ṙ R⁻¹ Ṙ)` of a single snapshot (rad⁻²).
pub fn fisher_information(cfg: &CrbConfig) -> Result<f64> {
    let r = cfg.covariance();
    let dr = covariance_derivative(cfg);
    let chol = Cholesky::new(r).ok_or_else(|| Error::Numeric("disk covariance is not invertible".into()))?;
    let x = chol.solve(&dr);
    let f = (&x * &x).trace().re;
    if !(f > 0.0) || !f.is_finite() {
        return Err(Error::Numeric(format!(
            "Fisher information {f} at θ = {}° (endfire angles carry no information)",
            cfg.theta_deg
        )));
    }
    Ok(f)
}

/// `v_CRB = 1/(S_M F)` in rad² and deg².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrbVariance {
    pub rad2: f64,
    pub deg2: f64,
}

pub fn crb_aoa_variance(cfg: &CrbConfig) -> Result<CrbVariance> {
    if cfg.num_measurements == 0 {
        return Err(Error::config("num_measurements", "must be at least 1"));
    }
    let rad2 = 1.0 / (cfg.num_measurements as f64 * fisher_information(cfg)?);
    Ok(CrbVariance { rad2, deg2: rad2 * (180.0 / PI).powi(2) })
}

/// True angle plus `N(0, v_crb)` noise (degrees), wrapped to (−180, 180].
pub fn crb_noised_aoa<R: Rng + ?Sized>(true_aoa_deg: f64, v_crb_deg2: f64, rng: &mut R) -> Result<f64> {
    if !(v_crb_deg2 >= 0.0) || !v_crb_deg2.is_finite() {
        return Err(Error::Domain(format!("CRB variance {v_crb_deg2} must be non-negative")));
    }
    let z: f64 = rng.sample(StandardNormal);
    Ok(wrap_deg(true_aoa_deg + v_crb_deg2.sqrt() * z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn cfg(n: usize) -> CrbConfig {
        CrbConfig {
            num_antennas: n,
            d_over_lambda: 0.5,
            angular_spread_deg: 10.0,
            tx_power_mw: 100.0,
            beta_linear: 1e-9,
            noise_power_mw: 1e-9,
            theta_deg: 60.0,
            num_measurements: 200,
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let c = cfg(4);
        let h = 1e-6f64;
        let plus = CrbConfig { theta_deg: c.theta_deg + h.to_degrees(), ..c }.covariance();
        let minus = CrbConfig { theta_deg: c.theta_deg - h.to_degrees(), ..c }.covariance();
        let fd = (plus - minus) / C64::new(2.0 * h, 0.0);
        let d = covariance_derivative(&c);
        let rel = (&d - &fd).norm() / fd.norm();
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn doubling_measurements_halves_bound() {
        let a = crb_aoa_variance(&cfg(8)).unwrap();
        let b = crb_aoa_variance(&CrbConfig { num_measurements: 400, ..cfg(8) }).unwrap();
        assert!((a.rad2 / b.rad2 - 2.0).abs() < 1e-12);
        assert!((a.deg2 / a.rad2 - (180.0 / PI).powi(2)).abs() < 1e-9);
    }

    #[test]
    fn bound_decreases_with_array_size() {
        let v: Vec<f64> = [4, 8, 16].iter().map(|&n| crb_aoa_variance(&cfg(n)).unwrap().rad2).collect();
        assert!(v[0] > v[1] && v[1] > v[2], "{v:?}");
    }

    #[test]
    fn endfire_is_flagged() {
        let c = CrbConfig { theta_deg: 0.0, ..cfg(4) };
        assert!(matches!(crb_aoa_variance(&c), Err(Error::Numeric(_))));
        assert!(crb_aoa_variance(&CrbConfig { num_measurements: 0, ..cfg(4) }).is_err());
    }

    #[test]
    fn noised_aoa_law() {
        let mut rng = substream(3, &[1]);
        assert_eq!(crb_noised_aoa(42.0, 0.0, &mut rng).unwrap(), 42.0);
        assert!(crb_noised_aoa(42.0, -1.0, &mut rng).is_err());
        let v = 0.3;
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| crb_noised_aoa(10.0, v, &mut rng).unwrap() - 10.0).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / v - 1.0).abs() < 0.05, "{var}");
    }
}
