//! Squared-exponential Gaussian process regression.
//!
//! One model maps a fingerprint vector to one position coordinate. Training
//! maximizes the log marginal likelihood by gradient ascent in log-hyper
//! space; prediction returns the latent posterior mean and variance.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky_with_jitter;

/// Lower bound on reported predictive variances (m²).
pub const VAR_FLOOR: f64 = 1e-9;

const JITTER_ESCALATIONS: u32 = 5;
const MAX_HALVINGS: u32 = 40;
/// Admissible range of every log-hyperparameter.
const LOG_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Kernel amplitude `b²`.
    pub signal_var: f64,
    /// `ϱ`; divides the squared distance directly.
    pub length_scale: f64,
    /// Observation noise `σ_ε²`.
    pub noise_var: f64,
}

impl Hyperparams {
    pub fn new(signal_var: f64, length_scale: f64, noise_var: f64) -> Result<Self> {
        let h = Self { signal_var, length_scale, noise_var };
        h.validate()?;
        Ok(h)
    }

    pub fn from_log(log: [f64; 3]) -> Self {
        Self {
            signal_var: log[0].exp(),
            length_scale: log[1].exp(),
            noise_var: log[2].exp(),
        }
    }

    pub fn to_log(&self) -> [f64; 3] {
        [self.signal_var.ln(), self.length_scale.ln(), self.noise_var.ln()]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("signal_var", self.signal_var),
            ("length_scale", self.length_scale),
            ("noise_var", self.noise_var),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("hyperparameter {name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// `b² exp(−‖r − r′‖² / (2ϱ))`.
pub fn kernel(r: &[f64], r2: &[f64], hyper: &Hyperparams) -> f64 {
    hyper.signal_var * (-sq_dist(r, r2) / (2.0 * hyper.length_scale)).exp()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

fn pairwise_sq_dist(x: &DMatrix<f64>) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| row(x, i)).collect();
    DMatrix::from_fn(x.nrows(), x.nrows(), |i, j| sq_dist(&rows[i], &rows[j]))
}

/// Noise-free Gram matrix `𝒦(X, X)`.
pub fn kernel_matrix(x: &DMatrix<f64>, hyper: &Hyperparams) -> DMatrix<f64> {
    pairwise_sq_dist(x).map(|d2| hyper.signal_var * (-d2 / (2.0 * hyper.length_scale)).exp())
}

struct Factor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn check_data(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Domain(format!("{} inputs for {} targets", x.nrows(), y.len())));
    }
    if x.nrows() == 0 {
        return Err(Error::Domain("GPR needs at least one training point".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite training data".into()));
    }
    Ok(())
}

fn factorize(gram: &DMatrix<f64>, y: &DVector<f64>, noise_var: f64) -> Result<Factor> {
    let k = gram.nrows();
    let mut noisy = gram.clone();
    for i in 0..k {
        noisy[(i, i)] += noise_var;
    }
    let base = 1e-10 * noisy.trace() / k as f64;
    let (chol, jitter) = cholesky_with_jitter(&noisy, base, JITTER_ESCALATIONS).ok_or_else(|| {
        Error::Training(format!(
            "kernel matrix not positive definite after {JITTER_ESCALATIONS} jitter escalations \
             (K = {k}, trace = {:.3e}, noise_var = {noise_var:.3e})",
            noisy.trace()
        ))
    })?;
    let alpha = chol.solve(y);
    Ok(Factor { chol, alpha, jitter })
}

fn lml_from_factor(f: &Factor, y: &DVector<f64>) -> f64 {
    let k = y.len() as f64;
    let l = f.chol.l_dirty();
    let log_det: f64 = 2.0 * (0..y.len()).map(|i| l[(i, i)].ln()).sum::<f64>();
    -0.5 * y.dot(&f.alpha) - 0.5 * log_det - 0.5 * k * (2.0 * std::f64::consts::PI).ln()
}

/// `−½ yᵀK̃⁻¹y − ½ log det K̃ − (K/2) log 2π` on raw (already preprocessed) data.
pub fn log_marginal_likelihood(x: &DMatrix<f64>, y: &DVector<f64>, hyper: &Hyperparams) -> Result<f64> {
    check_data(x, y)?;
    hyper.validate()?;
    let f = factorize(&kernel_matrix(x, hyper), y, hyper.noise_var)?;
    Ok(lml_from_factor(&f, y))
}

/// Gradient with respect to `(log b², log ϱ, log σ_ε²)`.
pub fn grad_log_marginal_likelihood(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    hyper: &Hyperparams,
) -> Result<[f64; 3]> {
    Ok(lml_and_grad(x, y, hyper)?.1)
}

/// Log marginal likelihood and its log-space gradient from one factorization.
pub fn lml_and_grad(x: &DMatrix<f64>, y: &DVector<f64>, hyper: &Hyperparams) -> Result<(f64, [f64; 3])> {
    check_data(x, y)?;
    hyper.validate()?;
    let d2 = pairwise_sq_dist(x);
    let gram = d2.map(|v| hyper.signal_var * (-v / (2.0 * hyper.length_scale)).exp());
    let f = factorize(&gram, y, hyper.noise_var)?;
    let lml = lml_from_factor(&f, y);
    let kinv = f.chol.inverse();
    let k = y.len();
    // W = ααᵀ − K̃⁻¹; each component is ½ tr(W ∂K̃) with symmetric factors.
    let mut g = [0.0; 3];
    for i in 0..k {
        for j in 0..k {
            let w = f.alpha[i] * f.alpha[j] - kinv[(i, j)];
            g[0] += w * gram[(i, j)];
            g[1] += w * gram[(i, j)] * d2[(i, j)] / (2.0 * hyper.length_scale);
        }
        g[2] += (f.alpha[i] * f.alpha[i] - kinv[(i, i)]) * hyper.noise_var;
    }
    Ok((lml, g.map(|v| 0.5 * v)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Stop when the log-space gradient norm falls below this.
    pub tolerance: f64,
    pub max_iters: usize,
    pub standardize_inputs: bool,
    pub center_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            tolerance: 1e-4,
            max_iters: 2000,
            standardize_inputs: true,
            center_targets: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainDiagnostics {
    pub iterations: usize,
    pub final_lml: f64,
    pub grad_norm: f64,
    pub converged: bool,
    /// Diagonal jitter needed by the final factorization.
    pub jitter: f64,
}

fn norm3(g: &[f64; 3]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Gradient ascent with backtracking on already preprocessed data.
///
/// Every iteration tries the step `η·∇`, halving it until the likelihood
/// does not decrease. A candidate outside the admissible log range or whose
/// kernel cannot be factorized counts as a decrease.
pub fn optimize_hyperparams(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    init: &Hyperparams,
    cfg: &TrainConfig,
) -> Result<(Hyperparams, TrainDiagnostics)> {
    if !(cfg.learning_rate > 0.0) || !(cfg.tolerance > 0.0) {
        return Err(Error::config("train", "learning_rate and tolerance must be positive"));
    }
    let mut theta = init.to_log();
    let (mut lml, mut grad) = lml_and_grad(x, y, init)?;
    let mut iterations = 0;
    let mut converged = norm3(&grad) < cfg.tolerance;
    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        let mut step = cfg.learning_rate;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = [0, 1, 2].map(|i| theta[i] + step * grad[i]);
            if cand.iter().all(|v| v.abs() <= LOG_BOUND) {
                if let Ok((l, g)) = lml_and_grad(x, y, &Hyperparams::from_log(cand)) {
                    if l >= lml {
                        theta = cand;
                        lml = l;
                        grad = g;
                        accepted = true;
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // No ascent direction at machine precision: a numerical stationary point.
            break;
        }
        converged = norm3(&grad) < cfg.tolerance;
    }
    let hyper = Hyperparams::from_log(theta);
    let f = factorize(&kernel_matrix(x, &hyper), y, hyper.noise_var)?;
    Ok((
        hyper,
        TrainDiagnostics { iterations, final_lml: lml, grad_norm: norm3(&grad), converged, jitter: f.jitter },
    ))
}

/// Per-dimension z-score transform (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputScaler {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for c in x.column_iter() {
            let m = c.sum() / n;
            let s = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            mean.push(m);
            // Constant columns carry no information; leave them centered.
            std.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, r: &[f64]) -> Vec<f64> {
        r.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.std[j])
    }
}

/// A fitted single-output GP.
#[derive(Debug, Clone)]
pub struct GprModel {
    inputs: DMatrix<f64>,
    targets: DVector<f64>,
    target_mean: f64,
    hyper: Hyperparams,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
    scaler: InputScaler,
    diagnostics: TrainDiagnostics,
}

fn preprocess(
    inputs: &DMatrix<f64>,
    targets: &DVector<f64>,
    cfg: &TrainConfig,
) -> (InputScaler, DMatrix<f64>, f64, DVector<f64>) {
    let scaler = if cfg.standardize_inputs {
        InputScaler::fit(inputs)
    } else {
        InputScaler::identity(inputs.ncols())
    };
    let x = scaler.transform_matrix(inputs);
    let target_mean = if cfg.center_targets { targets.mean() } else { 0.0 };
    let y = targets.map(|v| v - target_mean);
    (scaler, x, target_mean, y)
}

/// Starting point: `b² = var(y)`, `ϱ = D` (median squared distance when the
/// inputs are not standardized), `σ_ε² = 0.1·var(y)`.
pub fn initial_hyperparams(x: &DMatrix<f64>, y: &DVector<f64>, standardized: bool) -> Hyperparams {
    let n = y.len() as f64;
    let m = y.mean();
    let var = y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    let var = if var > 0.0 { var } else { 1.0 };
    let dim = x.ncols().max(1) as f64;
    let length_scale = if standardized {
        dim
    } else {
        let d2 = pairwise_sq_dist(x);
        let mut off: Vec<f64> = (0..x.nrows())
            .flat_map(|i| (i + 1..x.nrows()).map(move |j| (i, j)))
            .map(|(i, j)| d2[(i, j)])
            .filter(|v| *v > 0.0)
            .collect();
        off.sort_by(f64::total_cmp);
        off.get(off.len() / 2).copied().unwrap_or(dim)
    };
    Hyperparams { signal_var: var, length_scale, noise_var: 0.1 * var }
}

impl GprModel {
    /// Preprocesses, trains the hyperparameters and factorizes.
    pub fn fit(inputs: &DMatrix<f64>, targets: &DVector<f64>, cfg: &TrainConfig) -> Result<Self> {
        check_data(inputs, targets)?;
        if inputs.nrows() < 2 {
            return Err(Error::Training("GPR training needs at least two points".into()));
        }
        let (scaler, x, target_mean, y) = preprocess(inputs, targets, cfg);
        let init = initial_hyperparams(&x, &y, cfg.standardize_inputs);
        let (hyper, diagnostics) = optimize_hyperparams(&x, &y, &init, cfg)?;
        Self::assemble(x, y, target_mean, hyper, scaler, diagnostics)
    }

    /// Builds a model with fixed hyperparameters (no training).
    pub fn with_hyperparams(
        inputs: &DMatrix<f64>,
        targets: &DVector<f64>,
        hyper: Hyperparams,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        check_data(inputs, targets)?;
        hyper.validate()?;
        let (scaler, x, target_mean, y) = preprocess(inputs, targets, cfg);
        let diagnostics = TrainDiagnostics {
            iterations: 0,
            final_lml: f64::NAN,
            grad_norm: f64::NAN,
            converged: false,
            jitter: 0.0,
        };
        let mut m = Self::assemble(x, y, target_mean, hyper, scaler, diagnostics)?;
        m.diagnostics.final_lml = lml_from_parts(&m);
        Ok(m)
    }

    fn assemble(
        x: DMatrix<f64>,
        y: DVector<f64>,
        target_mean: f64,
        hyper: Hyperparams,
        scaler: InputScaler,
        mut diagnostics: TrainDiagnostics,
    ) -> Result<Self> {
        let f = factorize(&kernel_matrix(&x, &hyper), &y, hyper.noise_var)?;
        diagnostics.jitter = f.jitter;
        Ok(Self {
            chol_l: f.chol.l(),
            alpha: f.alpha,
            inputs: x,
            targets: y,
            target_mean,
            hyper,
            scaler,
            diagnostics,
        })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn diagnostics(&self) -> &TrainDiagnostics {
        &self.diagnostics
    }

    pub fn scaler(&self) -> &InputScaler {
        &self.scaler
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn num_points(&self) -> usize {
        self.inputs.nrows()
    }

    /// Lower Cholesky factor of `𝒦(X, X) + σ_ε² I` (plus any jitter).
    pub fn kernel_chol(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    /// The factorized matrix `𝒦(X, X) + σ_ε² I` without jitter.
    pub fn noisy_kernel(&self) -> DMatrix<f64> {
        let mut k = kernel_matrix(&self.inputs, &self.hyper);
        for i in 0..k.nrows() {
            k[(i, i)] += self.hyper.noise_var;
        }
        k
    }

    /// `K̃⁻¹ y` for the centered targets.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Posterior mean and latent variance at a raw (unstandardized) input.
    pub fn predict(&self, input: &[f64]) -> Result<(f64, f64)> {
        if input.len() != self.scaler.dim() {
            return Err(Error::Domain(format!(
                "test input has {} features, model expects {}",
                input.len(),
                self.scaler.dim()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite test input".into()));
        }
        let z = self.scaler.transform(input);
        let k = DVector::from_iterator(
            self.num_points(),
            (0..self.num_points()).map(|i| kernel(&row(&self.inputs, i), &z, &self.hyper)),
        );
        let mean = k.dot(&self.alpha) + self.target_mean;
        let v = self
            .chol_l
            .solve_lower_triangular(&k)
            .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
        let var = (self.hyper.signal_var - v.norm_squared()).max(VAR_FLOOR);
        Ok((mean, var))
    }
}

fn lml_from_parts(m: &GprModel) -> f64 {
    let k = m.targets.len() as f64;
    let log_det: f64 = 2.0 * m.chol_l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * m.targets.dot(&m.alpha) - 0.5 * log_det - 0.5 * k * (2.0 * std::f64::consts::PI).ln()
}

/// Where a position estimate came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateSource {
    Ap(usize),
    Method(String),
}

impl fmt::Display for EstimateSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ap(i) => write!(f, "ap{i}"),
            Self::Method(m) => f.write_str(m),
        }
    }
}

/// Gaussian position estimate with independent coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub mean: [f64; 2],
    /// Per-coordinate variances (m²), always positive.
    pub var: [f64; 2],
    pub source: EstimateSource,
}

/// The x and y models trained on the same inputs.
#[derive(Debug, Clone)]
pub struct CoordinateModels {
    pub x: GprModel,
    pub y: GprModel,
}

impl CoordinateModels {
    pub fn fit(
        inputs: &DMatrix<f64>,
        targets_x: &DVector<f64>,
        targets_y: &DVector<f64>,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        Ok(Self {
            x: GprModel::fit(inputs, targets_x, cfg)?,
            y: GprModel::fit(inputs, targets_y, cfg)?,
        })
    }

    pub fn predict(&self, input: &[f64], source: EstimateSource) -> Result<PositionEstimate> {
        let (mx, vx) = self.x.predict(input)?;
        let (my, vy) = self.y.predict(input)?;
        Ok(PositionEstimate { mean: [mx, my], var: [vx, vy], source })
    }
}
