//! Bessel functions of the first kind, integer order.
//!
//! Small arguments use the power series directly. Larger arguments use
//! Miller's backward recurrence normalized with `J0 + 2 Σ J_2k = 1`, which
//! stays accurate to a few ulps well beyond the argument range produced by
//! disk-scattering covariances (|x| < 60 for N ≤ 64 antennas).

const SERIES_LIMIT: f64 = 1.0;
const RESCALE_ABOVE: f64 = 1e200;

/// `J_n(x)` for `n = 0..=max_order`.
pub fn bessel_j_orders(max_order: usize, x: f64) -> Vec<f64> {
    if x == 0.0 {
        let mut out = vec![0.0; max_order + 1];
        out[0] = 1.0;
        return out;
    }
    let ax = x.abs();
    let mut out = if ax <= SERIES_LIMIT {
        (0..=max_order).map(|n| series(n, ax)).collect()
    } else {
        miller(max_order, ax)
    };
    if x < 0.0 {
        for (n, v) in out.iter_mut().enumerate() {
            if n % 2 == 1 {
                *v = -*v;
            }
        }
    }
    out
}

/// `J_n(x)`.
pub fn bessel_j(n: usize, x: f64) -> f64 {
    bessel_j_orders(n, x)[n]
}

fn series(n: usize, x: f64) -> f64 {
    let half = 0.5 * x;
    // (x/2)^n / n!
    let mut term = 1.0;
    for k in 1..=n {
        term *= half / k as f64;
    }
    let q = half * half;
    let mut sum = term;
    let mut m = 0usize;
    loop {
        m += 1;
        term *= -q / (m as f64 * (m + n) as f64);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
        if m > 200 {
            break;
        }
    }
    sum
}

fn miller(max_order: usize, x: f64) -> Vec<f64> {
    let start = {
        let m = max_order.max(x.ceil() as usize) + 40 + (x.sqrt() * 4.0) as usize;
        m + (m % 2)
    };
    let mut vals = vec![0.0; start + 2];
    vals[start + 1] = 0.0;
    vals[start] = 1e-30;
    let mut norm = 0.0;
    for k in (1..=start).rev() {
        let prev = 2.0 * k as f64 / x * vals[k] - vals[k + 1];
        vals[k - 1] = prev;
        if prev.abs() > RESCALE_ABOVE {
            for v in vals[k - 1..].iter_mut() {
                *v /= RESCALE_ABOVE;
            }
            norm /= RESCALE_ABOVE;
        }
        if (k - 1) % 2 == 0 && k - 1 > 0 {
            norm += 2.0 * vals[k - 1];
        }
    }
    norm += vals[0];
    vals.truncate(max_order + 1);
    vals.iter().map(|v| v / norm).collect()
}
