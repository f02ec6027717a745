//! Coefficient covariance: clustered sandwich (CR1) and classical OLS.

use super::matrix::DesignMatrix;
use super::ols::OlsFit;
use super::EstimatorError;

/// Full `p × p` covariance over the design-matrix columns. Rows and
/// columns of aliased coefficients are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Covariance {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Standard error for column `j`, `None` when not estimable.
    pub fn std_error(&self, j: usize) -> Option<f64> {
        let v = self.get(j, j);
        v.is_finite().then(|| v.max(0.0).sqrt())
    }

    fn expand(dim: usize, kept: &[usize], compact: &[f64]) -> Self {
        let k = kept.len();
        let mut data = vec![f64::NAN; dim * dim];
        for (a, &i) in kept.iter().enumerate() {
            for (b, &j) in kept.iter().enumerate() {
                data[i * dim + j] = compact[a * k + b];
            }
        }
        Covariance { dim, data }
    }
}

fn small_matmul(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        for m in 0..k {
            let aim = a[i * k + m];
            if aim == 0.0 {
                continue;
            }
            for j in 0..k {
                out[i * k + j] += aim * b[m * k + j];
            }
        }
    }
    out
}

/// Liang–Zeger sandwich with respondent clusters and the CR1 factor
/// `G/(G-1) · (N-1)/(N-K)`.
pub fn cluster_robust_vcov(dm: &DesignMatrix, fit: &OlsFit) -> Result<Covariance, EstimatorError> {
    let g = dm.n_clusters;
    if g < 2 {
        return Err(EstimatorError::InsufficientClusters(g));
    }
    let n = dm.n_rows;
    let k = fit.rank();
    if n <= k {
        return Err(EstimatorError::InsufficientDegreesOfFreedom { n, k });
    }
    // Cluster score sums s_g = Σ_{i∈g} x_i e_i over kept columns.
    let mut scores = vec![0.0; g * k];
    for (pos, &j) in fit.kept.iter().enumerate() {
        let col = dm.col(j);
        for i in 0..n {
            scores[dm.clusters[i] * k + pos] += col[i] * fit.residuals[i];
        }
    }
    let mut meat = vec![0.0; k * k];
    for s in scores.chunks(k) {
        for a in 0..k {
            if s[a] == 0.0 {
                continue;
            }
            for b in 0..k {
                meat[a * k + b] += s[a] * s[b];
            }
        }
    }
    let bread = fit.xtx_inverse();
    let mut v = small_matmul(&small_matmul(&bread, &meat, k), &bread, k);
    let (gf, nf, kf) = (g as f64, n as f64, k as f64);
    let c = gf / (gf - 1.0) * (nf - 1.0) / (nf - kf);
    // Symmetrize away rounding.
    for a in 0..k {
        for b in a..k {
            let s = 0.5 * (v[a * k + b] + v[b * k + a]) * c;
            v[a * k + b] = s;
            v[b * k + a] = s;
        }
    }
    Ok(Covariance::expand(dm.n_cols(), &fit.kept, &v))
}

/// Homoskedastic OLS covariance `σ̂² (X'X)⁻¹`.
pub fn classical_vcov(dm: &DesignMatrix, fit: &OlsFit) -> Result<Covariance, EstimatorError> {
    let n = dm.n_rows;
    let k = fit.rank();
    if n <= k {
        return Err(EstimatorError::InsufficientDegreesOfFreedom { n, k });
    }
    let sigma2 = fit.residuals.iter().map(|e| e * e).sum::<f64>() / (n - k) as f64;
    let v: Vec<f64> = fit.xtx_inverse().into_iter().map(|b| b * sigma2).collect();
    Ok(Covariance::expand(dm.n_cols(), &fit.kept, &v))
}
