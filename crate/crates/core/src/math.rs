//! Small numerical helpers shared across modules: stable log-sum-exp and a
//! Cholesky factor wrapper used for Mahalanobis geometry.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// log(exp(a) + exp(b)) without overflow; -inf is the additive identity.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// log(sum(exp(xs))); returns -inf for an empty slice or all-(-inf) input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Lower-triangular Cholesky factor of an SPD matrix, stored row-major.
///
/// Holds everything the samplers need: `B` with `sigma = B B^T`, its log
/// determinant, and triangular solves for Mahalanobis radii.
#[derive(Clone, Debug)]
pub struct CholFactor {
    d: usize,
    l: Vec<f64>,
    log_det: f64,
}

impl CholFactor {
    /// Factor `sigma`, adding `1e-10 * trace/d` to the diagonal and retrying
    /// up to three times if the decomposition fails (pilot-estimated scale
    /// matrices can be numerically semidefinite).
    pub fn from_spd(sigma: &[Vec<f64>]) -> Result<Self> {
        let d = sigma.len();
        if d == 0 || sigma.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidScale);
        }
        let base = DMatrix::from_fn(d, d, |i, j| sigma[i][j]);
        if (&base - base.transpose()).abs().max() > 1e-8 * base.abs().max().max(1.0) {
            return Err(Error::InvalidScale);
        }
        let jitter = 1e-10 * base.trace() / d as f64;
        let mut attempt = base.clone();
        for retry in 0..4 {
            if let Some(chol) = attempt.clone().cholesky() {
                let l = chol.l();
                let log_det = (0..d).map(|i| l[(i, i)].ln()).sum();
                let mut flat = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..=i {
                        flat[i * d + j] = l[(i, j)];
                    }
                }
                return Ok(CholFactor { d, l: flat, log_det });
            }
            if retry == 3 {
                break;
            }
            for i in 0..d {
                attempt[(i, i)] += jitter;
            }
        }
        Err(Error::NonSpdScale)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// log |B| where sigma = B B^T.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Solve L z = v by forward substitution.
    pub fn solve_lower(&self, v: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut acc = v[i];
            for j in 0..i {
                acc -= self.l[i * d + j] * z[j];
            }
            z[i] = acc / self.l[i * d + i];
        }
        z
    }

    /// B y (lower-triangular matrix-vector product).
    pub fn mul_lower(&self, y: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; d];
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.l[i * d + j] * y[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Squared Mahalanobis distance (theta - mu)^T sigma^{-1} (theta - mu).
    pub fn mahalanobis_sq(&self, theta: &[f64], mu: &[f64]) -> f64 {
        let diff: Vec<f64> = theta.iter().zip(mu).map(|(t, m)| t - m).collect();
        let z = self.solve_lower(&diff);
        z.iter().map(|v| v * v).sum()
    }

    /// Reconstruct sigma = B B^T (used for checkpoints and invariant checks).
    pub fn reconstruct_sigma(&self) -> Vec<Vec<f64>> {
        let d = self.d;
        let mut out = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..=i.min(j) {
                    acc += self.l[i * d + k] * self.l[j * d + k];
                }
                out[i][j] = acc;
            }
        }
        out
    }
}

/// Sample mean of rows.
pub fn mean_rows(samples: &[Vec<f64>]) -> Vec<f64> {
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mut mu = vec![0.0; d];
    for row in samples {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    mu
}

/// Sample covariance of rows with denominator n - 1.
pub fn covariance_rows(samples: &[Vec<f64>], mu: &[f64]) -> Vec<Vec<f64>> {
    let d = mu.len();
    let n = samples.len() as f64;
    let mut cov = vec![vec![0.0; d]; d];
    for row in samples {
        for i in 0..d {
            let di = row[i] - mu[i];
            for j in 0..=i {
                cov[i][j] += di * (row[j] - mu[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            cov[i][j] /= n - 1.0;
            cov[j][i] = cov[i][j];
        }
    }
    cov
}

/// Pearson correlation matrix of rows; errors on a zero-variance coordinate.
pub fn correlation_rows(samples: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mu = mean_rows(samples);
    let cov = covariance_rows(samples, &mu);
    let d = mu.len();
    let mut corr = vec![vec![0.0; d]; d];
    for i in 0..d {
        if cov[i][i] <= 0.0 {
            return Err(Error::DegenerateCoordinate { coord: i });
        }
    }
    for i in 0..d {
        for j in 0..d {
            corr[i][j] = cov[i][j] / (cov[i][i] * cov[j][j]).sqrt();
        }
    }
    Ok(corr)
}
