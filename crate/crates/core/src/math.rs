//! Log-space weight arithmetic and small dense linear algebra.

use nalgebra::{DMatrix, DVector};

/// `log(sum(exp(x)))`, stable for very negative inputs. Empty or all `-inf`
/// input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights in place so that `sum(exp(w)) == 1` and returns the
/// log of the previous total. If every weight is `-inf` the weights are left
/// untouched and `-inf` is returned.
pub fn normalize_log_weights(log_w: &mut [f64]) -> f64 {
    let total = log_sum_exp(log_w);
    if total.is_finite() {
        for w in log_w.iter_mut() {
            *w -= total;
        }
    }
    total
}

/// Exponentiates normalized log-weights; the result is renormalized so the
/// sum is one to rounding.
pub fn weights_from_log(log_w: &[f64]) -> Vec<f64> {
    let total = log_sum_exp(log_w);
    if !total.is_finite() {
        let n = log_w.len().max(1) as f64;
        return vec![1.0 / n; log_w.len()];
    }
    let mut w: Vec<f64> = log_w.iter().map(|&v| (v - total).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

/// Effective sample size `1 / sum(w_i^2)` of normalized weights.
pub fn ess(weights: &[f64]) -> f64 {
    let ss: f64 = weights.iter().map(|w| w * w).sum();
    if ss > 0.0 {
        1.0 / ss
    } else {
        0.0
    }
}

/// ESS computed directly from unnormalized log-weights.
pub fn ess_from_log(log_w: &[f64]) -> f64 {
    let total = log_sum_exp(log_w);
    if !total.is_finite() {
        return 0.0;
    }
    let ss: f64 = log_w.iter().map(|&v| (2.0 * (v - total)).exp()).sum();
    1.0 / ss
}

/// Weighted mean of row vectors. Weights need not be normalized.
pub fn weighted_mean(rows: &[&[f64]], weights: &[f64]) -> Vec<f64> {
    let dim = rows.first().map_or(0, |r| r.len());
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; dim];
    for (row, &w) in rows.iter().zip(weights) {
        for (m, &x) in mean.iter_mut().zip(row.iter()) {
            *m += w / total * x;
        }
    }
    mean
}

/// Weighted covariance `sum_i w_i (x_i - m)(x_i - m)^T / sum_i w_i` (no
/// small-sample correction).
pub fn weighted_covariance(rows: &[&[f64]], weights: &[f64]) -> DMatrix<f64> {
    let mean = weighted_mean(rows, weights);
    let total: f64 = weights.iter().sum();
    let dim = mean.len();
    let mut cov = DMatrix::zeros(dim, dim);
    for (row, &w) in rows.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let w = w / total;
        for i in 0..dim {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += w * di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    cov
}

/// Cholesky factor of `cov`, adding `jitter * I` (growing tenfold) until the
/// factorization succeeds. Returns the lower factor and the jitter used.
pub fn cholesky_jittered(cov: &DMatrix<f64>, jitter: f64) -> (DMatrix<f64>, f64) {
    if let Some(c) = cov.clone().cholesky() {
        if c.l().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
            return (c.l(), 0.0);
        }
    }
    let n = cov.nrows();
    let mut eps = jitter;
    loop {
        let m = cov + DMatrix::identity(n, n) * eps;
        if let Some(c) = m.cholesky() {
            return (c.l(), eps);
        }
        eps *= 10.0;
        assert!(eps.is_finite(), "covariance cannot be regularized");
    }
}

/// Squared Mahalanobis distance `d^T inv d` for a precomputed inverse.
pub fn mahalanobis_sq(diff: &[f64], inv: &DMatrix<f64>) -> f64 {
    let v = DVector::from_column_slice(diff);
    (v.transpose() * inv * &v)[(0, 0)]
}

/// Sample mean and unbiased sample variance. Fewer than two values give
/// zero variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}
