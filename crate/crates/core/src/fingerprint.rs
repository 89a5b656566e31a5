//! RSS and AOA fingerprint extraction.
//!
//! Offline, every AP measures the RSS from the UE placed at each RP and
//! stores the geometric AOA (with a small measurement error). Online, the
//! RSS is estimated the same way and the AOA comes from MUSIC.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_received_signal, steering_vector, ChannelStats, C64};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::geometry::{nominal_aoa_deg, pathloss_db, wrap_deg, Point2, Point3, Scenario};
use crate::rng::{purpose, substream};

/// Default MUSIC search resolution (degrees).
pub const MUSIC_GRID_STEP_DEG: f64 = 0.05;

/// RSS in dB relative to the transmit power: `10 log10(mean ‖Y‖²_F / ρ)`.
pub fn estimate_rss_db(blocks: &[DMatrix<C64>], tx_power_mw: f64) -> Result<f64> {
    if blocks.is_empty() {
        return Err(Error::Domain("RSS estimate needs at least one block".into()));
    }
    let mean = blocks.iter().map(|b| b.norm_squared()).sum::<f64>() / blocks.len() as f64;
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::Numeric(format!("mean received power is {mean}")));
    }
    Ok(10.0 * (mean / tx_power_mw).log10())
}

/// `(1/S_Y) Σ Y Yᴴ`.
pub fn sample_covariance(blocks: &[DMatrix<C64>]) -> DMatrix<C64> {
    let n = blocks.first().map_or(0, |b| b.nrows());
    let mut r = DMatrix::<C64>::zeros(n, n);
    for b in blocks {
        r += b * b.adjoint();
    }
    r / C64::new(blocks.len().max(1) as f64, 0.0)
}

/// Geometric AOA plus Gaussian measurement error, wrapped to (−180, 180].
pub fn offline_aoa_deg<R: Rng + ?Sized>(
    ap: &Point2,
    rp: &Point2,
    noise_std_deg: f64,
    rng: &mut R,
) -> Result<f64> {
    let nominal = nominal_aoa_deg(ap, rp)?;
    let noise: f64 = rng.sample(StandardNormal);
    Ok(wrap_deg(nominal + noise_std_deg * noise))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MusicEstimate {
    /// Peak of the pseudospectrum, in (0, 180) degrees.
    pub angle_deg: f64,
    /// All eigenvalues of the sample covariance were equal, so the
    /// pseudospectrum carries no information.
    pub degenerate: bool,
}

/// Single-source MUSIC on a precomputed angular grid.
#[derive(Debug, Clone)]
pub struct MusicEstimator {
    num_antennas: usize,
    d_over_lambda: f64,
    grid_deg: Vec<f64>,
    steering: Vec<DVector<C64>>,
}

impl MusicEstimator {
    /// Grid `step, 2·step, ...` strictly inside (0°, 180°).
    pub fn new(num_antennas: usize, d_over_lambda: f64, step_deg: f64) -> Self {
        let count = (180.0 / step_deg).ceil() as usize;
        let grid_deg: Vec<f64> = (1..count)
            .map(|i| i as f64 * step_deg)
            .filter(|&a| a < 180.0)
            .collect();
        let steering = grid_deg
            .iter()
            .map(|&a| steering_vector(a, num_antennas, d_over_lambda))
            .collect();
        Self { num_antennas, d_over_lambda, grid_deg, steering }
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn grid_deg(&self) -> &[f64] {
        &self.grid_deg
    }

    pub fn estimate(&self, blocks: &[DMatrix<C64>]) -> Result<MusicEstimate> {
        if blocks.is_empty() {
            return Err(Error::Domain("MUSIC needs at least one block".into()));
        }
        self.estimate_from_covariance(&sample_covariance(blocks))
    }

    pub fn estimate_from_covariance(&self, cov: &DMatrix<C64>) -> Result<MusicEstimate> {
        let (eigvals, signal) = principal_eigenpair(cov, self.num_antennas)?;
        let max = eigvals.iter().cloned().fold(f64::MIN, f64::max);
        let min = eigvals.iter().cloned().fold(f64::MAX, f64::min);
        let degenerate = max - min <= 1e-12 * max.abs().max(f64::MIN_POSITIVE);

        // With orthonormal eigenvectors U_n U_nᴴ = I − u_1 u_1ᴴ, so the
        // denominator aᴴ U_n U_nᴴ a equals ‖a‖² − |u_1ᴴ a|².
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, a) in self.steering.iter().enumerate() {
            let proj = signal.dotc(a).norm_sqr();
            let denom = (a.norm_squared() - proj).max(f64::MIN_POSITIVE);
            let p = 1.0 / denom;
            if p > best.0 {
                best = (p, i);
            }
        }
        Ok(MusicEstimate { angle_deg: self.grid_deg[best.1], degenerate })
    }

    /// Full pseudospectrum `1 / (aᴴ U_n U_nᴴ a)` over the grid, evaluated with
    /// the explicit noise subspace.
    pub fn pseudospectrum(&self, cov: &DMatrix<C64>) -> Result<Vec<f64>> {
        let un = noise_subspace(cov)?;
        Ok(self
            .grid_deg
            .iter()
            .map(|&a| 1.0 / music_denominator(&un, a, self.d_over_lambda))
            .collect())
    }
}

fn hermitian_eigen(cov: &DMatrix<C64>) -> Result<SymmetricEigen<C64, nalgebra::Dyn>> {
    if cov.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numeric("covariance has non-finite entries".into()));
    }
    SymmetricEigen::try_new(cov.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::Numeric("Hermitian eigendecomposition did not converge".into()))
}

/// Eigenvalues and the unit eigenvector of the largest one.
fn principal_eigenpair(cov: &DMatrix<C64>, n: usize) -> Result<(Vec<f64>, DVector<C64>)> {
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::Domain(format!(
            "covariance is {}x{}, estimator expects {n}x{n}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let eig = hermitian_eigen(cov)?;
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let top = vals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok((vals, eig.eigenvectors.column(top).into_owned()))
}

/// Eigenvectors of the `N − 1` smallest eigenvalues, as columns.
pub fn noise_subspace(cov: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let eig = hermitian_eigen(cov)?;
    let n = cov.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let cols: Vec<DVector<C64>> = order[..n - 1]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    Ok(DMatrix::from_columns(&cols))
}

/// `aᴴ(θ) U_n U_nᴴ a(θ)`.
pub fn music_denominator(noise_subspace: &DMatrix<C64>, theta_deg: f64, d_over_lambda: f64) -> f64 {
    let a = steering_vector(theta_deg, noise_subspace.nrows(), d_over_lambda);
    (noise_subspace.adjoint() * a).norm_squared()
}

/// One-shot MUSIC estimate on a fresh grid.
pub fn music_aoa_deg(
    blocks: &[DMatrix<C64>],
    d_over_lambda: f64,
    grid_step_deg: f64,
) -> Result<MusicEstimate> {
    let n = blocks
        .first()
        .map(|b| b.nrows())
        .ok_or_else(|| Error::Domain("MUSIC needs at least one block".into()))?;
    if n < 2 {
        return Err(Error::Domain("MUSIC needs at least two antennas".into()));
    }
    MusicEstimator::new(n, d_over_lambda, grid_step_deg).estimate(blocks)
}

/// Maps a ULA estimate in (0, 180) onto the side of the array axis given by
/// `reference_deg`. The array cannot tell θ from −θ; the simulator resolves
/// the mirror ambiguity with the known geometry.
pub fn resolve_ula_ambiguity(estimate_deg: f64, reference_deg: f64) -> f64 {
    if reference_deg < 0.0 {
        wrap_deg(-estimate_deg)
    } else {
        estimate_deg
    }
}

/// Large-scale gain (linear) for a link, including shadowing in dB.
pub fn link_gain(ap: &Point3, loc: &Point2, shadow_db: f64, config: &ScenarioConfig) -> Result<f64> {
    let db = pathloss_db(ap, loc, config)? + shadow_db;
    Ok(10f64.powf(db / 10.0))
}

/// Offline fingerprint database of one AP.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDb {
    pub ap_index: usize,
    pub rss_db: Vec<f64>,
    pub aoa_deg: Vec<f64>,
    pub rp_positions: Arc<[Point2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FingerprintRow {
    rp_index: usize,
    x: f64,
    y: f64,
    rss_db: f64,
    aoa_deg: f64,
}

impl FingerprintDb {
    pub fn len(&self) -> usize {
        self.rss_db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rss_db.is_empty()
    }

    /// `K × 2` hybrid matrix `[rss_db, aoa_deg]`.
    pub fn hybrid_inputs(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), 2, |k, c| if c == 0 { self.rss_db[k] } else { self.aoa_deg[k] })
    }

    /// Column `coord` (0 = x, 1 = y) of the RP position matrix.
    pub fn targets(&self, coord: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.rp_positions.iter().map(|p| if coord == 0 { p.x } else { p.y }),
        )
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (k, p) in self.rp_positions.iter().enumerate() {
            w.serialize(FingerprintRow {
                rp_index: k,
                x: p.x,
                y: p.y,
                rss_db: self.rss_db[k],
                aoa_deg: self.aoa_deg[k],
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, ap_index: usize) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut rows: Vec<FingerprintRow> = Vec::new();
        for (i, rec) in r.deserialize().enumerate() {
            let row: FingerprintRow = rec.map_err(|e| Error::Parse {
                line: i + 2,
                reason: e.to_string(),
            })?;
            if row.rp_index != rows.len() {
                return Err(Error::Parse {
                    line: i + 2,
                    reason: format!("expected rp_index {}, found {}", rows.len(), row.rp_index),
                });
            }
            rows.push(row);
        }
        Ok(Self {
            ap_index,
            rss_db: rows.iter().map(|r| r.rss_db).collect(),
            aoa_deg: rows.iter().map(|r| r.aoa_deg).collect(),
            rp_positions: rows.iter().map(|r| Point2::new(r.x, r.y)).collect(),
        })
    }
}

/// Builds AP `ap_index`'s offline database from the RP shadowing field.
///
/// Random streams are keyed by the scenario seed, `stream_key` and the
/// (AP, RP) pair, so the database is reproducible and independent of the
/// order in which APs are processed.
pub fn build_fingerprint_db(
    scenario: &Scenario,
    ap_index: usize,
    rp_shadow_db: &[f64],
    stream_key: &[u64],
) -> Result<FingerprintDb> {
    let cfg = &scenario.config;
    let model = cfg.array_model();
    let ap = scenario.ap_positions[ap_index];
    let seed = cfg.seed;
    let k = scenario.num_rps();
    if rp_shadow_db.len() != k {
        return Err(Error::Domain(format!(
            "shadow field has {} entries for {k} RPs",
            rp_shadow_db.len()
        )));
    }
    let mut rss_db = Vec::with_capacity(k);
    let mut aoa_deg = Vec::with_capacity(k);
    for (rp_index, rp) in scenario.rp_positions.iter().enumerate() {
        let key = |p: u64| {
            let mut v = vec![p];
            v.extend_from_slice(stream_key);
            v.extend_from_slice(&[ap_index as u64, rp_index as u64]);
            v
        };
        let beta = link_gain(&ap, rp, rp_shadow_db[rp_index], cfg)?;
        let nominal = nominal_aoa_deg(&ap.ground(), rp)?;
        let stats = ChannelStats::new(beta, nominal, &model);
        let blocks = sample_received_signal(
            &stats,
            &model,
            cfg.rss_samples,
            &mut substream(seed, &key(purpose::RP_SIGNAL)),
        );
        rss_db.push(estimate_rss_db(&blocks, cfg.tx_power_mw)?);
        aoa_deg.push(offline_aoa_deg(
            &ap.ground(),
            rp,
            cfg.offline_aoa_noise_deg,
            &mut substream(seed, &key(purpose::OFFLINE_AOA)),
        )?);
    }
    Ok(FingerprintDb {
        ap_index,
        rss_db,
        aoa_deg,
        rp_positions: scenario.rp_positions.clone().into(),
    })
}

/// One AP's online measurement of the UE at a test point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestObservation {
    pub ap_index: usize,
    pub rss_db: f64,
    pub aoa_deg: f64,
    #[serde(default)]
    pub degenerate_spectrum: bool,
}

impl TestObservation {
    pub fn hybrid(&self) -> [f64; 2] {
        [self.rss_db, self.aoa_deg]
    }
}

/// Online RSS plus MUSIC AOA for the UE at `test_point`.
pub fn measure_online<R: Rng + ?Sized>(
    scenario: &Scenario,
    ap_index: usize,
    test_point: &Point2,
    shadow_db: f64,
    music: &MusicEstimator,
    rng: &mut R,
) -> Result<TestObservation> {
    let cfg = &scenario.config;
    let model = cfg.array_model();
    let ap = scenario.ap_positions[ap_index];
    let beta = link_gain(&ap, test_point, shadow_db, cfg)?;
    let nominal = nominal_aoa_deg(&ap.ground(), test_point)?;
    let stats = ChannelStats::new(beta, nominal, &model);
    let blocks = sample_received_signal(&stats, &model, cfg.rss_samples, rng);
    let rss_db = estimate_rss_db(&blocks, cfg.tx_power_mw)?;
    let est = music.estimate(&blocks)?;
    Ok(TestObservation {
        ap_index,
        rss_db,
        aoa_deg: resolve_ula_ambiguity(est.angle_deg, nominal),
        degenerate_spectrum: est.degenerate,
    })
}
