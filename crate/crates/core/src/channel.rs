//! ULA steering vectors, the disk-scattering covariance and per-block
//! received-signal synthesis.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub use nalgebra::Complex;
pub type C64 = Complex<f64>;

use crate::bessel::bessel_j_orders;
use crate::config::ArrayModel;

/// Scattering paths summed per channel draw.
pub const SCATTERING_PATHS: usize = 200;

/// ULA response: element `n` is `exp(−j·2π·(d/λ)·n·cos θ)`.
pub fn steering_vector(theta_deg: f64, num_antennas: usize, d_over_lambda: f64) -> DVector<C64> {
    let phase = -2.0 * PI * d_over_lambda * theta_deg.to_radians().cos();
    DVector::from_fn(num_antennas, |n, _| C64::from_polar(1.0, phase * n as f64))
}

/// `ζ = 2π (d/λ) Δ sin θ`, with Δ in radians.
pub fn disk_zeta(theta_deg: f64, model: &ArrayModel) -> f64 {
    2.0 * PI * model.d_over_lambda * model.angular_spread_deg.to_radians() * theta_deg.to_radians().sin()
}

/// Real scaling matrix `G(ζ)` with `[G]_mn = J0((m−n)ζ) + J2((m−n)ζ)`.
pub fn disk_scaling_matrix(theta_deg: f64, model: &ArrayModel) -> DMatrix<f64> {
    let n = model.num_antennas;
    let zeta = disk_zeta(theta_deg, model);
    // Toeplitz: one value per lag.
    let lag: Vec<f64> = (0..n)
        .map(|k| {
            let j = bessel_j_orders(2, k as f64 * zeta);
            j[0] + j[2]
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| lag[i.abs_diff(j)])
}

/// Per-snapshot covariance under disk scattering:
/// `ρ β G(ζ) ⊙ a(θ) a(θ)ᴴ + σ_n² I`.
pub fn disk_covariance(beta_linear: f64, theta_deg: f64, model: &ArrayModel) -> DMatrix<C64> {
    let a = steering_vector(theta_deg, model.num_antennas, model.d_over_lambda);
    let g = disk_scaling_matrix(theta_deg, model);
    let scale = model.tx_power_mw * beta_linear;
    let mut r = (&a * a.adjoint()).zip_map(&g, |aa, gv| aa * (gv * scale));
    for i in 0..model.num_antennas {
        r[(i, i)] += C64::new(model.noise_power_mw, 0.0);
    }
    r
}

/// Large-scale statistics of the link between one UE location and one AP.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub beta_linear: f64,
    pub nominal_aoa_deg: f64,
    pub disk_cov: DMatrix<C64>,
}

impl ChannelStats {
    pub fn new(beta_linear: f64, nominal_aoa_deg: f64, model: &ArrayModel) -> Self {
        Self {
            beta_linear,
            nominal_aoa_deg,
            disk_cov: disk_covariance(beta_linear, nominal_aoa_deg, model),
        }
    }
}

/// Angular offset (radians) of a scatterer drawn uniformly from a disk seen
/// under half-angle `spread_rad`. The resulting density is the semicircle law
/// on `[−Δ, Δ]`, whose characteristic function `2 J1(x)/x = J0(x) + J2(x)`
/// produces the `G(ζ)` factor of the closed-form covariance.
pub fn disk_angle_offset<R: Rng + ?Sized>(spread_rad: f64, rng: &mut R) -> f64 {
    if spread_rad == 0.0 {
        return 0.0;
    }
    let r = rng.random::<f64>().sqrt();
    let psi = 2.0 * PI * rng.random::<f64>();
    spread_rad * r * psi.cos()
}

fn complex_normal<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> C64 {
    let s = (0.5 * variance).sqrt();
    C64::new(
        s * rng.sample::<f64, _>(StandardNormal),
        s * rng.sample::<f64, _>(StandardNormal),
    )
}

/// One multipath channel draw `h = √(β/M) Σ α_m a(φ + Θ_m)`.
pub fn sample_channel<R: Rng + ?Sized>(
    beta_linear: f64,
    nominal_aoa_deg: f64,
    model: &ArrayModel,
    rng: &mut R,
) -> DVector<C64> {
    let n = model.num_antennas;
    let phi = nominal_aoa_deg.to_radians();
    let spread = model.angular_spread_deg.to_radians();
    let k = 2.0 * PI * model.d_over_lambda;
    let mut h = DVector::<C64>::zeros(n);
    for _ in 0..SCATTERING_PATHS {
        let theta = phi + disk_angle_offset(spread, rng);
        let alpha = complex_normal(1.0, rng);
        let step = C64::from_polar(1.0, -k * theta.cos());
        let mut elem = alpha;
        for v in h.iter_mut() {
            *v += elem;
            elem *= step;
        }
    }
    h * C64::new((beta_linear / SCATTERING_PATHS as f64).sqrt(), 0.0)
}

/// `num_blocks` independent received blocks `Y = √ρ h ψᴴ + W` (each `N × z`),
/// with an all-ones pilot ψ and a fresh channel draw per block.
pub fn sample_received_signal<R: Rng + ?Sized>(
    stats: &ChannelStats,
    model: &ArrayModel,
    num_blocks: usize,
    rng: &mut R,
) -> Vec<DMatrix<C64>> {
    let n = model.num_antennas;
    let z = model.pilot_length;
    let amp = C64::new(model.tx_power_mw.sqrt(), 0.0);
    (0..num_blocks)
        .map(|_| {
            let h = sample_channel(stats.beta_linear, stats.nominal_aoa_deg, model, rng) * amp;
            DMatrix::from_fn(n, z, |i, _| h[i] + complex_normal(model.noise_power_mw, rng))
        })
        .collect()
}
