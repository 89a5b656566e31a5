//! Baseline regressors against brute-force and composition oracles.

use std::sync::Arc;

use cellfree_loc::baselines::{
    distributed_median_with, fit_centralized_gpr, CentralFingerprintDb, CentralVariant, KnnRegressor, KnnWeighting,
    LinearRegressor, Regressor,
};
use cellfree_loc::fingerprint::{FingerprintDb, TestObservation};
use cellfree_loc::gpr::{CoordinateModels, EstimateSource, TrainConfig};
use cellfree_loc::geometry::Point2;
use cellfree_loc::rng::substream;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn random_db(ap: usize, rps: &Arc<[Point2]>, seed: u64) -> FingerprintDb {
    let mut rng = substream(seed, &[ap as u64]);
    FingerprintDb {
        ap_index: ap,
        rss_db: rps.iter().map(|p| -60.0 - 0.1 * p.x + rng.random_range(-3.0..3.0)).collect(),
        aoa_deg: rps.iter().map(|p| p.y * 0.5 + rng.random_range(-5.0..5.0)).collect(),
        rp_positions: rps.clone(),
    }
}

fn random_rps(k: usize, seed: u64) -> Arc<[Point2]> {
    let mut rng = substream(seed, &[0xB0]);
    (0..k).map(|_| Point2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0))).collect()
}

/// Population mean and std per column; zero std maps to one.
fn zscore_columns(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let k = x.nrows() as f64;
    let mean: Vec<f64> = x.column_iter().map(|c| c.sum() / k).collect();
    let std = x
        .column_iter()
        .zip(&mean)
        .map(|(c, m)| {
            let s = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / k).sqrt();
            if s > 0.0 { s } else { 1.0 }
        })
        .collect();
    (mean, std)
}

/// All-pairs KNN with inverse-distance weights, written out longhand.
fn knn_oracle(x: &DMatrix<f64>, t: &[DVector<f64>; 2], k: usize, q: &[f64]) -> [f64; 2] {
    let (mean, std) = zscore_columns(x);
    let zq: Vec<f64> = q.iter().enumerate().map(|(j, v)| (v - mean[j]) / std[j]).collect();
    let mut dist = Vec::new();
    for i in 0..x.nrows() {
        let mut d2 = 0.0;
        for j in 0..x.ncols() {
            d2 += ((x[(i, j)] - mean[j]) / std[j] - zq[j]).powi(2);
        }
        dist.push((d2.sqrt(), i));
    }
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let nb = &dist[..k];
    let w: Vec<f64> = nb.iter().map(|(d, _)| 1.0 / d).collect();
    let total: f64 = w.iter().sum();
    [0, 1].map(|c| nb.iter().zip(&w).map(|((_, i), wi)| wi * t[c][*i]).sum::<f64>() / total)
}

#[test]
fn single_ap_centralized_equals_distributed() {
    let rps = random_rps(36, 1);
    let db = random_db(0, &rps, 1);
    let cfg = TrainConfig { max_iters: 300, ..TrainConfig::default() };
    let central = CentralFingerprintDb::from_aps(std::slice::from_ref(&db), CentralVariant::Hybrid).unwrap();
    let cm = fit_centralized_gpr(&central, &cfg).unwrap();
    let dm = CoordinateModels::fit(&db.hybrid_inputs(), &db.targets(0), &db.targets(1), &cfg).unwrap();
    let obs = [TestObservation { ap_index: 0, rss_db: -70.0, aoa_deg: 40.0, degenerate_spectrum: false }];
    let a = cm.predict(&central.test_input(&obs), EstimateSource::Ap(0)).unwrap();
    let b = dm.predict(&obs[0].hybrid(), EstimateSource::Ap(0)).unwrap();
    for c in 0..2 {
        assert!((a.mean[c] - b.mean[c]).abs() < 1e-9);
        assert!((a.var[c] - b.var[c]).abs() < 1e-9);
    }
}

#[test]
fn wide_centralized_fit_is_positive_definite() {
    let rps: Arc<[Point2]> = cellfree_loc::geometry::rp_grid(200.0, 15).into();
    let dbs: Vec<FingerprintDb> = (0..25).map(|ap| random_db(ap, &rps, 2)).collect();
    let central = CentralFingerprintDb::from_aps(&dbs, CentralVariant::Hybrid).unwrap();
    assert_eq!(central.inputs.shape(), (225, 50));
    let cfg = TrainConfig { max_iters: 20, ..TrainConfig::default() };
    let m = fit_centralized_gpr(&central, &cfg).unwrap();
    let q = central.inputs.row(7).iter().copied().collect::<Vec<_>>();
    let e = Regressor::predict(&m, &q, EstimateSource::Method("cent_hybrid".into())).unwrap();
    assert!(e.mean.iter().chain(&e.var).all(|v| v.is_finite()));
    let rss = CentralFingerprintDb::from_aps(&dbs, CentralVariant::Rss).unwrap();
    assert_eq!(rss.inputs.ncols(), 25);
}

#[test]
fn knn_matches_brute_force() {
    for seed in 0..20 {
        let mut rng = substream(seed, &[0xC0]);
        let x = DMatrix::from_fn(50, 3, |_, c| rng.random_range(-1.0..1.0) * (c as f64 + 1.0) * 10.0);
        let t = [DVector::from_fn(50, |_, _| rng.random_range(0.0..200.0)), DVector::from_fn(50, |_, _| rng.random_range(0.0..200.0))];
        let knn = KnnRegressor::fit(&x, t.clone(), 4, KnnWeighting::InverseDistance).unwrap();
        let q = [rng.random_range(-10.0..10.0), rng.random_range(-20.0..20.0), rng.random_range(-30.0..30.0)];
        let got = knn.predict(&q, EstimateSource::Ap(0)).unwrap();
        let want = knn_oracle(&x, &t, 4, &q);
        for c in 0..2 {
            assert!((got.mean[c] - want[c]).abs() < 1e-9, "seed {seed}");
        }
    }
}

#[test]
fn lr_matches_normal_equations() {
    for seed in 0..20 {
        let mut rng = substream(seed, &[0xD0]);
        let x = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-5.0..5.0));
        let t = [DVector::from_fn(30, |_, _| rng.random_range(0.0..200.0)), DVector::from_fn(30, |_, _| rng.random_range(0.0..200.0))];
        let lr = LinearRegressor::fit(&x, t.clone()).unwrap();
        assert!(!lr.ridge_used);
        let a = DMatrix::from_fn(30, 5, |r, c| if c == 0 { 1.0 } else { x[(r, c - 1)] });
        let inv = (a.transpose() * &a).try_inverse().unwrap();
        let q = [0.3, -1.0, 2.0, 4.5];
        let e = lr.predict(&q, EstimateSource::Ap(0)).unwrap();
        for c in 0..2 {
            let w = &inv * a.transpose() * &t[c];
            let want = w[0] + (0..4).map(|i| w[i + 1] * q[i]).sum::<f64>();
            assert!((e.mean[c] - want).abs() < 1e-7, "seed {seed}: {} vs {want}", e.mean[c]);
            let res = &t[c] - &a * &w;
            assert!((lr.residual_var[c] - res.norm_squared() / 25.0).abs() < 1e-7 * lr.residual_var[c]);
        }
    }
}

#[test]
fn distributed_knn_matches_hand_composition() {
    let rps = random_rps(10, 3);
    let dbs: Vec<FingerprintDb> = (0..3).map(|ap| random_db(ap, &rps, 3)).collect();
    let obs: Vec<TestObservation> = (0..3)
        .map(|ap| TestObservation { ap_index: ap, rss_db: -65.0 - ap as f64, aoa_deg: 30.0 + 7.0 * ap as f64, degenerate_spectrum: false })
        .collect();
    let models: Vec<KnnRegressor> = dbs
        .iter()
        .map(|d| KnnRegressor::fit(&d.hybrid_inputs(), [d.targets(0), d.targets(1)], 4, KnnWeighting::InverseDistance).unwrap())
        .collect();
    let fused = distributed_median_with(&models, &obs).unwrap();
    let per_ap: Vec<[f64; 2]> = dbs
        .iter()
        .zip(&obs)
        .map(|(d, o)| knn_oracle(&d.hybrid_inputs(), &[d.targets(0), d.targets(1)], 4, &o.hybrid()))
        .collect();
    for c in 0..2 {
        let mut v: Vec<f64> = per_ap.iter().map(|p| p[c]).collect();
        v.sort_by(f64::total_cmp);
        assert!((fused.estimate.mean[c] - v[1]).abs() < 1e-9);
    }
}

#[test]
fn identical_ap_means_fuse_to_that_value() {
    let rps = random_rps(10, 4);
    let db = random_db(0, &rps, 4);
    let lr = LinearRegressor::fit(&db.hybrid_inputs(), [db.targets(0), db.targets(1)]).unwrap();
    let o = TestObservation { ap_index: 0, rss_db: -70.0, aoa_deg: 20.0, degenerate_spectrum: false };
    let models = vec![lr.clone(), lr.clone(), lr.clone(), lr];
    let obs: Vec<TestObservation> = (0..4).map(|ap| TestObservation { ap_index: ap, ..o }).collect();
    let fused = distributed_median_with(&models, &obs).unwrap();
    let single = models[0].predict(&o.hybrid(), EstimateSource::Ap(0)).unwrap();
    assert_eq!(fused.estimate.mean, single.mean);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn knn_stays_in_neighbour_hull(seed in 0u64..100_000, k in 1usize..8, q in prop::array::uniform2(-3.0..3.0f64)) {
        let mut rng = substream(seed, &[0xE0]);
        let x = DMatrix::from_fn(20, 2, |_, _| rng.random_range(-2.0..2.0));
        let t = [DVector::from_fn(20, |_, _| rng.random_range(0.0..200.0)), DVector::from_fn(20, |_, _| rng.random_range(0.0..200.0))];
        let knn = KnnRegressor::fit(&x, t.clone(), k, KnnWeighting::InverseDistance).unwrap();
        let nb = knn.neighbours(&q).unwrap();
        let e = knn.predict(&q, EstimateSource::Ap(0)).unwrap();
        // Non-negative weights normalized to one.
        let d: Vec<f64> = nb.iter().map(|(_, d)| *d).collect();
        let w: Vec<f64> = if d.iter().any(|v| *v == 0.0) {
            d.iter().map(|v| f64::from(u8::from(*v == 0.0))).collect()
        } else {
            d.iter().map(|v| 1.0 / v).collect()
        };
        let total: f64 = w.iter().sum();
        for c in 0..2 {
            let lo = nb.iter().map(|(i, _)| t[c][*i]).fold(f64::INFINITY, f64::min);
            let hi = nb.iter().map(|(i, _)| t[c][*i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(e.mean[c] >= lo - 1e-9 && e.mean[c] <= hi + 1e-9);
            let comb: f64 = nb.iter().zip(&w).map(|((i, _), wi)| wi / total * t[c][*i]).sum();
            prop_assert!((comb - e.mean[c]).abs() < 1e-9);
            prop_assert!(w.iter().all(|wi| *wi >= 0.0));
        }
    }
}
