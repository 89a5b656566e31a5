//! GPR engine against dense-inverse and finite-difference oracles.

use cellfree_loc::gpr::{
    grad_log_marginal_likelihood, initial_hyperparams, kernel, log_marginal_likelihood, optimize_hyperparams,
    GprModel, Hyperparams, TrainConfig, VAR_FLOOR,
};
use cellfree_loc::rng::substream;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn random_problem(seed: u64, k: usize, d: usize) -> (DMatrix<f64>, DVector<f64>, Hyperparams) {
    let mut rng = substream(seed, &[0xA11CE]);
    let x = DMatrix::from_fn(k, d, |_, _| rng.random_range(-2.0..2.0));
    let y = DVector::from_fn(k, |_, _| rng.random_range(-3.0..3.0));
    let h = Hyperparams::new(
        rng.random_range(0.3..3.0),
        rng.random_range(0.2..2.0),
        rng.random_range(0.01..0.5),
    )
    .unwrap();
    (x, y, h)
}

fn dense_noisy_kernel(x: &DMatrix<f64>, h: &Hyperparams) -> DMatrix<f64> {
    let k = x.nrows();
    DMatrix::from_fn(k, k, |i, j| {
        let ri: Vec<f64> = x.row(i).iter().copied().collect();
        let rj: Vec<f64> = x.row(j).iter().copied().collect();
        let d2: f64 = ri.iter().zip(&rj).map(|(a, b)| (a - b).powi(2)).sum();
        h.signal_var * (-d2 / (2.0 * h.length_scale)).exp() + if i == j { h.noise_var } else { 0.0 }
    })
}

/// `−½ yᵀK̃⁻¹y − ½ log det K̃ − (K/2) log 2π` with an explicit inverse and
/// an LU determinant.
fn dense_lml(x: &DMatrix<f64>, y: &DVector<f64>, h: &Hyperparams) -> f64 {
    let kt = dense_noisy_kernel(x, h);
    let inv = kt.clone().try_inverse().unwrap();
    let fit = (y.transpose() * &inv * y)[(0, 0)];
    -0.5 * fit - 0.5 * kt.determinant().ln() - 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

#[test]
fn lml_matches_dense_oracle() {
    for seed in 0..20 {
        let (x, y, h) = random_problem(seed, 5, 2);
        let got = log_marginal_likelihood(&x, &y, &h).unwrap();
        let want = dense_lml(&x, &y, &h);
        assert!((got - want).abs() < 1e-9, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn more_noise_never_increases_data_fit() {
    for seed in 0..20 {
        let (x, y, h) = random_problem(seed, 6, 3);
        let fit = |noise: f64| {
            let hh = Hyperparams { noise_var: noise, ..h };
            let inv = dense_noisy_kernel(&x, &hh).try_inverse().unwrap();
            (y.transpose() * inv * &y)[(0, 0)]
        };
        let mut prev = fit(h.noise_var);
        for add in [0.01, 0.1, 1.0, 10.0] {
            let next = fit(h.noise_var + add);
            assert!(next <= prev + 1e-12);
            prev = next;
        }
    }
}

#[test]
fn predict_matches_dense_oracle() {
    let raw = TrainConfig { standardize_inputs: false, center_targets: false, ..TrainConfig::default() };
    for seed in 0..20 {
        let (x, y, h) = random_problem(seed, 6, 2);
        let m = GprModel::with_hyperparams(&x, &y, h, &raw).unwrap();
        let inv = dense_noisy_kernel(&x, &h).try_inverse().unwrap();
        let star = [0.3 * seed as f64 - 2.0, 1.1];
        let kv = DVector::from_fn(6, |i, _| kernel(&[x[(i, 0)], x[(i, 1)]], &star, &h));
        let mean = (kv.transpose() * &inv * &y)[(0, 0)];
        let var = (h.signal_var - (kv.transpose() * &inv * &kv)[(0, 0)]).max(VAR_FLOOR);
        let (pm, pv) = m.predict(&star).unwrap();
        assert!((pm - mean).abs() < 1e-9 && (pv - var).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..30 {
        let (x, y, h) = random_problem(seed, 8, 2);
        let g = grad_log_marginal_likelihood(&x, &y, &h).unwrap();
        let theta = h.to_log();
        let step = 1e-5;
        for i in 0..3 {
            let mut p = theta;
            let mut m = theta;
            p[i] += step;
            m[i] -= step;
            let fd = (log_marginal_likelihood(&x, &y, &Hyperparams::from_log(p)).unwrap()
                - log_marginal_likelihood(&x, &y, &Hyperparams::from_log(m)).unwrap())
                / (2.0 * step);
            assert!((g[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "seed {seed} component {i}: {} vs {fd}", g[i]);
        }
    }
}

#[test]
fn accepted_iterates_never_decrease_likelihood() {
    // Replaying the trainer with growing iteration budgets traces its path.
    let (x, y, _) = random_problem(7, 8, 2);
    let init = initial_hyperparams(&x, &y, false);
    let mut prev = log_marginal_likelihood(&x, &y, &init).unwrap();
    for iters in 1..40 {
        let cfg = TrainConfig { max_iters: iters, ..TrainConfig::default() };
        let (_, d) = optimize_hyperparams(&x, &y, &init, &cfg).unwrap();
        assert!(d.final_lml >= prev - 1e-12, "iteration {iters}");
        prev = d.final_lml;
    }
}

#[test]
fn recovers_generating_hyperparameters() {
    let truth = Hyperparams::new(1.0, 0.5, 0.01).unwrap();
    let cfg = TrainConfig { standardize_inputs: false, center_targets: false, ..TrainConfig::default() };
    let mut logs: [Vec<f64>; 3] = Default::default();
    for seed in 0..20 {
        let mut rng = substream(seed, &[0x6A55]);
        let x = DMatrix::from_fn(200, 2, |_, _| rng.random_range(-3.0..3.0));
        let kt = dense_noisy_kernel(&x, &truth);
        let l = kt.cholesky().unwrap().l();
        let z = DVector::from_fn(200, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = l * z;
        let init = initial_hyperparams(&x, &y, false);
        let (h, _) = optimize_hyperparams(&x, &y, &init, &cfg).unwrap();
        for (i, v) in h.to_log().into_iter().enumerate() {
            logs[i].push(v);
        }
    }
    for (i, want) in truth.to_log().into_iter().enumerate() {
        logs[i].sort_by(f64::total_cmp);
        let median = 0.5 * (logs[i][9] + logs[i][10]);
        assert!((median - want).abs() <= 0.3, "log-hyper {i}: median {median} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictive_variance_bounds(seed in 0u64..10_000, sx in -50.0..50.0f64, sy in -50.0..50.0f64) {
        let (x, y, h) = random_problem(seed, 7, 2);
        let m = GprModel::with_hyperparams(&x, &y, h, &TrainConfig::default()).unwrap();
        let (_, v) = m.predict(&[sx, sy]).unwrap();
        prop_assert!(v >= VAR_FLOOR);
        prop_assert!(v <= h.signal_var + h.noise_var);
    }

    #[test]
    fn mean_invariant_to_input_offset(seed in 0u64..10_000, c in -100.0..100.0f64) {
        let (x, y, _) = random_problem(seed, 8, 2);
        let cfg = TrainConfig { max_iters: 100, ..TrainConfig::default() };
        let a = GprModel::fit(&x, &y, &cfg).unwrap();
        let b = GprModel::fit(&x.add_scalar(c), &y, &cfg).unwrap();
        let (ma, _) = a.predict(&[0.4, -0.2]).unwrap();
        let (mb, _) = b.predict(&[0.4 + c, -0.2 + c]).unwrap();
        prop_assert!((ma - mb).abs() < 1e-6 * (1.0 + ma.abs()), "{} vs {}", ma, mb);
    }

    #[test]
    fn kernel_symmetric(a in prop::array::uniform3(-10.0..10.0f64), b in prop::array::uniform3(-10.0..10.0f64)) {
        let h = Hyperparams::new(1.7, 0.6, 0.1).unwrap();
        prop_assert_eq!(kernel(&a, &b, &h), kernel(&b, &a, &h));
        prop_assert!(kernel(&a, &b, &h) <= h.signal_var);
    }
}
