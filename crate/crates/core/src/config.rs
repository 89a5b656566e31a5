//! Simulation parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest single-sided angular spread for which the small-angle disk
/// scattering covariance is used.
pub const MAX_ANGULAR_SPREAD_DEG: f64 = 15.0;

/// Scenario and propagation parameters. Field names double as the flat key
/// names of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Side of the square deployment area (m).
    pub area_side_m: f64,
    /// Number of APs (L).
    pub num_aps: usize,
    /// ULA elements per AP (N).
    pub num_antennas: usize,
    /// Reference points on the square grid (K); must be a perfect square.
    pub num_rps: usize,
    /// Pilot length (z).
    pub pilot_length: usize,
    pub carrier_freq_hz: f64,
    /// Element spacing in wavelengths (d/λ).
    pub antenna_spacing_wavelengths: f64,
    pub ap_height_m: f64,
    pub ue_height_m: f64,
    /// UE transmit power ρ (mW).
    pub tx_power_mw: f64,
    /// Thermal noise power before the noise figure is applied (dBm).
    pub noise_power_dbm: f64,
    pub noise_figure_db: f64,
    /// Path loss at 1 m (dB).
    pub pathloss_ref_db: f64,
    /// Path loss exponent γ.
    pub pathloss_exp: f64,
    /// Log-normal shadowing standard deviation σ_SF (dB).
    pub shadow_sigma_db: f64,
    /// Shadowing decorrelation distance (m).
    pub decorr_dist_m: f64,
    /// Single-sided angular spread Δ of the disk scattering model (degrees).
    pub angular_spread_deg: f64,
    /// Received blocks averaged per RSS / covariance estimate (S_Y).
    pub rss_samples: usize,
    /// Std-dev of the error added to offline geometric AOAs (degrees).
    pub offline_aoa_noise_deg: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    /// Desk-scale defaults: L = 9, N = 8, K = 64, σ_SF = 8 dB, everything
    /// else at urban-micro values.
    fn default() -> Self {
        Self {
            area_side_m: 200.0,
            num_aps: 9,
            num_antennas: 8,
            num_rps: 64,
            pilot_length: 1,
            carrier_freq_hz: 2e9,
            antenna_spacing_wavelengths: 0.5,
            ap_height_m: 10.0,
            ue_height_m: 1.5,
            tx_power_mw: 100.0,
            noise_power_dbm: -96.0,
            noise_figure_db: 8.0,
            pathloss_ref_db: -28.8,
            pathloss_exp: 3.53,
            shadow_sigma_db: 8.0,
            decorr_dist_m: 13.0,
            angular_spread_deg: 10.0,
            rss_samples: 200,
            offline_aoa_noise_deg: 2.0,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// Full-scale deployment: L = 25, N = 25, K = 225.
    pub fn full_scale() -> Self {
        Self {
            num_aps: 25,
            num_antennas: 25,
            num_rps: 225,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(field: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be finite and > 0, got {v}")))
            }
        }
        fn non_negative(field: &str, v: f64) -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be finite and >= 0, got {v}")))
            }
        }

        positive("area_side_m", self.area_side_m)?;
        if self.num_aps < 1 {
            return Err(Error::config("num_aps", "need at least one AP"));
        }
        if self.num_antennas < 2 {
            return Err(Error::config("num_antennas", "need at least two antennas"));
        }
        if self.num_rps == 0 || self.grid_side().pow(2) != self.num_rps {
            return Err(Error::config(
                "num_rps",
                format!("{} is not a positive perfect square", self.num_rps),
            ));
        }
        if self.pilot_length < 1 {
            return Err(Error::config("pilot_length", "must be >= 1"));
        }
        positive("carrier_freq_hz", self.carrier_freq_hz)?;
        positive("antenna_spacing_wavelengths", self.antenna_spacing_wavelengths)?;
        positive("ap_height_m", self.ap_height_m)?;
        positive("ue_height_m", self.ue_height_m)?;
        positive("tx_power_mw", self.tx_power_mw)?;
        if !self.noise_power_dbm.is_finite() {
            return Err(Error::config("noise_power_dbm", "must be finite"));
        }
        non_negative("noise_figure_db", self.noise_figure_db)?;
        if !self.pathloss_ref_db.is_finite() {
            return Err(Error::config("pathloss_ref_db", "must be finite"));
        }
        positive("pathloss_exp", self.pathloss_exp)?;
        non_negative("shadow_sigma_db", self.shadow_sigma_db)?;
        positive("decorr_dist_m", self.decorr_dist_m)?;
        non_negative("angular_spread_deg", self.angular_spread_deg)?;
        if self.angular_spread_deg > MAX_ANGULAR_SPREAD_DEG {
            return Err(Error::config(
                "angular_spread_deg",
                format!(
                    "{} exceeds the small-angle limit of {MAX_ANGULAR_SPREAD_DEG}",
                    self.angular_spread_deg
                ),
            ));
        }
        if self.rss_samples < 1 {
            return Err(Error::config("rss_samples", "must be >= 1"));
        }
        non_negative("offline_aoa_noise_deg", self.offline_aoa_noise_deg)?;
        Ok(())
    }

    /// Number of RPs along one side of the grid.
    pub fn grid_side(&self) -> usize {
        (self.num_rps as f64).sqrt().round() as usize
    }

    /// Effective receiver noise power in mW, noise figure included.
    pub fn noise_power_mw(&self) -> f64 {
        10f64.powf((self.noise_power_dbm + self.noise_figure_db) / 10.0)
    }

    pub fn array_model(&self) -> ArrayModel {
        ArrayModel {
            num_antennas: self.num_antennas,
            d_over_lambda: self.antenna_spacing_wavelengths,
            angular_spread_deg: self.angular_spread_deg,
            tx_power_mw: self.tx_power_mw,
            noise_power_mw: self.noise_power_mw(),
            pilot_length: self.pilot_length,
        }
    }
}

/// The subset of parameters that shape a single AP's received signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayModel {
    pub num_antennas: usize,
    pub d_over_lambda: f64,
    pub angular_spread_deg: f64,
    pub tx_power_mw: f64,
    /// Effective noise power σ_n² (mW).
    pub noise_power_mw: f64,
    pub pilot_length: usize,
}
