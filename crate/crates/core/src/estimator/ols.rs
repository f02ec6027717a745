//! Least squares through a Householder QR with limited column pivoting.
//!
//! Columns are processed in order. A column whose norm, after the
//! reflections of the columns kept before it, falls below
//! `RANK_TOLERANCE` times its original norm is declared aliased and
//! skipped; it gets no coefficient. All-zero columns (a level that never
//! appears) are always aliased. Earlier columns win, so when two columns
//! are collinear the later one is reported NA.

use super::matrix::DesignMatrix;
use super::EstimatorError;

/// Relative norm below which a column counts as linearly dependent.
pub const RANK_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct OlsFit {
    /// One per design-matrix column; `None` for aliased columns.
    pub coefficients: Vec<Option<f64>>,
    pub residuals: Vec<f64>,
    /// Indices of the estimable columns, in column order.
    pub kept: Vec<usize>,
    /// Inverse of the `rank × rank` triangular factor over `kept`,
    /// row-major. `R⁻¹ R⁻ᵀ` is `(X'X)⁻¹` restricted to `kept`.
    pub r_inv: Vec<f64>,
}

impl OlsFit {
    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    /// `(X'X)⁻¹` over the kept columns, row-major `rank × rank`.
    pub fn xtx_inverse(&self) -> Vec<f64> {
        let k = self.rank();
        let mut out = vec![0.0; k * k];
        for i in 0..k {
            for j in i..k {
                // R⁻¹ is upper triangular: row i is zero left of i.
                let s: f64 = (j..k).map(|m| self.r_inv[i * k + m] * self.r_inv[j * k + m]).sum();
                out[i * k + j] = s;
                out[j * k + i] = s;
            }
        }
        out
    }
}

/// Fits `y` on every column of `dm`, flagging aliased columns instead of
/// failing.
pub fn fit_ols(dm: &DesignMatrix) -> Result<OlsFit, EstimatorError> {
    let n = dm.n_rows;
    let p = dm.n_cols();
    if n == 0 {
        return Err(EstimatorError::EmptyDataset);
    }
    let mut a = dm.x.clone();
    let mut qty = dm.y.clone();
    let orig_norm: Vec<f64> = (0..p).map(|j| norm(&a[j * n..(j + 1) * n])).collect();

    let mut kept: Vec<usize> = Vec::new();
    // Column j of R (over kept columns) is stored as r_cols[position].
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::new();

    for j in 0..p {
        let k = kept.len();
        if k >= n {
            break;
        }
        let col = &a[j * n..(j + 1) * n];
        let tail = norm(&col[k..]);
        if orig_norm[j] == 0.0 || tail <= RANK_TOLERANCE * orig_norm[j] {
            continue;
        }
        // Householder vector v with v[0] = 1 mapping col[k..] to (alpha, 0, ...).
        let x0 = col[k];
        let alpha = if x0 >= 0.0 { -tail } else { tail };
        let mut v: Vec<f64> = col[k..].to_vec();
        v[0] = x0 - alpha;
        let v0 = v[0];
        for e in v.iter_mut() {
            *e /= v0;
        }
        let tau = (alpha - x0) / alpha;

        let mut rcol = col[..k].to_vec();
        rcol.push(alpha);
        r_cols.push(rcol);
        kept.push(j);

        for jj in (j + 1)..p {
            apply_reflector(&mut a[jj * n + k..(jj + 1) * n], &v, tau);
        }
        apply_reflector(&mut qty[k..], &v, tau);
        reflectors.push((v, tau));
    }

    let r = kept.len();
    // Back substitution R b = (Q'y)[..r].
    let mut b = vec![0.0; r];
    for i in (0..r).rev() {
        let mut s = qty[i];
        for m in (i + 1)..r {
            s -= r_cols[m][i] * b[m];
        }
        b[i] = s / r_cols[i][i];
    }

    let mut coefficients = vec![None; p];
    for (pos, &j) in kept.iter().enumerate() {
        coefficients[j] = Some(b[pos]);
    }
    let mut residuals = dm.y.clone();
    for (pos, &j) in kept.iter().enumerate() {
        let col = dm.col(j);
        let bj = b[pos];
        for (e, &xv) in residuals.iter_mut().zip(col) {
            *e -= xv * bj;
        }
    }

    // Invert the upper-triangular factor column by column.
    let mut r_inv = vec![0.0; r * r];
    for c in 0..r {
        r_inv[c * r + c] = 1.0 / r_cols[c][c];
        for i in (0..c).rev() {
            let mut s = 0.0;
            for m in (i + 1)..=c {
                s += r_cols[m][i] * r_inv[m * r + c];
            }
            r_inv[i * r + c] = -s / r_cols[i][i];
        }
    }

    Ok(OlsFit {
        coefficients,
        residuals,
        kept,
        r_inv,
    })
}

fn norm(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * v.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}

fn apply_reflector(x: &mut [f64], v: &[f64], tau: f64) {
    let dot: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
    let s = tau * dot;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= s * vi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::matrix::Column;

    fn matrix(cols: &[&[f64]], y: &[f64]) -> DesignMatrix {
        let n = y.len();
        DesignMatrix {
            n_rows: n,
            columns: (0..cols.len()).map(|_| Column::Intercept).collect(),
            x: cols.iter().flat_map(|c| c.iter().copied()).collect(),
            y: y.to_vec(),
            clusters: (0..n).collect(),
            n_clusters: n,
        }
    }

    /// Solves the normal equations by Gauss-Jordan elimination.
    fn normal_equations(cols: &[&[f64]], y: &[f64]) -> Vec<f64> {
        let p = cols.len();
        let mut m = vec![vec![0.0; p + 1]; p];
        for i in 0..p {
            for j in 0..p {
                m[i][j] = cols[i].iter().zip(cols[j]).map(|(a, b)| a * b).sum();
            }
            m[i][p] = cols[i].iter().zip(y).map(|(a, b)| a * b).sum();
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
            m.swap(c, piv);
            let d = m[c][c];
            for e in m[c].iter_mut() {
                *e /= d;
            }
            for r in 0..p {
                if r != c {
                    let f = m[r][c];
                    let row_c = m[c].clone();
                    for (e, rc) in m[r].iter_mut().zip(row_c) {
                        *e -= f * rc;
                    }
                }
            }
        }
        m.iter().map(|r| r[p]).collect()
    }

    #[test]
    fn matches_normal_equations() {
        let x0 = [1.0; 6];
        let x1 = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let x2 = [0.5, -1.0, 2.0, 0.0, 3.0, 1.0];
        let y = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let fit = fit_ols(&matrix(&[&x0, &x1, &x2], &y)).unwrap();
        let oracle = normal_equations(&[&x0, &x1, &x2], &y);
        for (c, o) in fit.coefficients.iter().zip(oracle) {
            assert!((c.unwrap() - o).abs() < 1e-12);
        }
        // Residuals orthogonal to every column.
        for c in [&x0[..], &x1, &x2] {
            let d: f64 = c.iter().zip(&fit.residuals).map(|(a, b)| a * b).sum();
            assert!(d.abs() < 1e-12);
        }
        // (X'X)^-1 times X'X is the identity.
        let inv = fit.xtx_inverse();
        let cols = [&x0[..], &x1, &x2];
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3)
                    .map(|m| inv[i * 3 + m] * cols[m].iter().zip(cols[j]).map(|(a, b)| a * b).sum::<f64>())
                    .sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_outcome() {
        let x0 = [1.0; 4];
        let x1 = [0.0, 1.0, 1.0, 0.0];
        let x2 = [1.0, 1.0, 0.0, 0.0];
        let y = [1.0; 4];
        let fit = fit_ols(&matrix(&[&x0, &x1, &x2], &y)).unwrap();
        assert!((fit.coefficients[0].unwrap() - 1.0).abs() < 1e-14);
        assert!(fit.coefficients[1].unwrap().abs() < 1e-14);
        assert!(fit.coefficients[2].unwrap().abs() < 1e-14);
        assert!(fit.residuals.iter().all(|e| e.abs() < 1e-14));
    }

    #[test]
    fn aliased_columns_are_na() {
        let x0 = [1.0; 4];
        let zero = [0.0; 4];
        let x2 = [0.0, 1.0, 1.0, 0.0];
        let dup = [0.0, 2.0, 2.0, 0.0];
        let y = [1.0, 0.0, 1.0, 0.0];
        let fit = fit_ols(&matrix(&[&x0, &zero, &x2, &dup], &y)).unwrap();
        assert!(fit.coefficients[1].is_none());
        assert!(fit.coefficients[3].is_none());
        assert_eq!(fit.kept, vec![0, 2]);
        assert!((fit.coefficients[0].unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_rows_is_an_error() {
        assert!(matches!(fit_ols(&matrix(&[&[]], &[])), Err(EstimatorError::EmptyDataset)));
    }
}
