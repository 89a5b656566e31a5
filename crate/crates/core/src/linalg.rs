//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, Dyn};

/// Cholesky factorization that retries with a growing diagonal jitter.
///
/// The first attempt uses the matrix as given; subsequent attempts add
/// `base_jitter`, `10·base_jitter`, ... up to `escalations` retries. Returns
/// the factor and the jitter that was finally applied, or `None` if every
/// attempt failed.
pub(crate) fn cholesky_with_jitter(
    matrix: &DMatrix<f64>,
    base_jitter: f64,
    escalations: u32,
) -> Option<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(matrix.clone()) {
        return Some((c, 0.0));
    }
    let mut jitter = base_jitter;
    for _ in 0..escalations {
        let mut m = matrix.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Some((c, jitter));
        }
        jitter *= 10.0;
    }
    None
}
