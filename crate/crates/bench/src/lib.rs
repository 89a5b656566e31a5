//! Fixtures shared by the benchmarks.

use cellfree_loc::channel::{sample_received_signal, ChannelStats, C64};
use cellfree_loc::config::ArrayModel;
use cellfree_loc::gpr::{EstimateSource, PositionEstimate};
use cellfree_loc::harness::{build_setup, SetupData};
use cellfree_loc::rng::substream;
use cellfree_loc::ScenarioConfig;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// One desk-scale setup (L = 9, N = 8, K = 64) with `num_test_points` UEs.
pub fn desk_setup(num_test_points: usize) -> SetupData {
    build_setup(&ScenarioConfig::default(), 0, num_test_points).expect("default setup builds")
}

/// Random regression problem with a smooth target.
pub fn gpr_problem(k: usize, d: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = substream(seed, &[k as u64, d as u64]);
    let x = DMatrix::from_fn(k, d, |_, _| rng.random_range(-3.0..3.0));
    let y = DVector::from_fn(k, |i, _| 100.0 + 40.0 * f64::sin(x.row(i).sum()) + rng.random_range(-1.0..1.0));
    (x, y)
}

pub fn array_model(num_antennas: usize) -> ArrayModel {
    ScenarioConfig { num_antennas, ..ScenarioConfig::default() }.array_model()
}

/// `S_Y` received blocks of one link at 20 dB per-antenna SNR.
pub fn received_blocks(num_antennas: usize, samples: usize, seed: u64) -> Vec<DMatrix<C64>> {
    let model = array_model(num_antennas);
    let beta = 100.0 * model.noise_power_mw / model.tx_power_mw;
    let stats = ChannelStats::new(beta, 60.0, &model);
    sample_received_signal(&stats, &model, samples, &mut substream(seed, &[0]))
}

pub fn random_estimates(l: usize, seed: u64) -> Vec<PositionEstimate> {
    let mut rng = substream(seed, &[l as u64]);
    (0..l)
        .map(|i| PositionEstimate {
            mean: [rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)],
            var: [rng.random_range(1.0..500.0), rng.random_range(1.0..500.0)],
            source: EstimateSource::Ap(i),
        })
        .collect()
}
