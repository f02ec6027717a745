//! Respondent (cluster) bootstrap.
//!
//! Replicate `b` resamples whole respondents with replacement using a
//! ChaCha8 stream seeded by `seed` on stream `b`, so serial and parallel
//! execution produce identical replicates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::DesignMatrix;
use super::ols::fit_ols;
use super::EstimatorError;

/// Share of replicates a level may be missing from before its SE is NA.
pub const MAX_EXCLUDED_SHARE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

/// Bootstrap summary for one design-matrix column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnBootstrap {
    pub std_err: Option<f64>,
    /// 2.5% and 97.5% percentiles of the replicate estimates.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub used: usize,
    pub excluded: usize,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub replicates: usize,
    pub seed: u64,
    /// One per design-matrix column.
    pub columns: Vec<ColumnBootstrap>,
}

/// Coefficients of replicate `b`.
pub fn replicate(
    dm: &DesignMatrix,
    cluster_rows: &[Vec<usize>],
    seed: u64,
    b: usize,
) -> Result<Vec<Option<f64>>, EstimatorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    let g = cluster_rows.len();
    let mut rows = Vec::with_capacity(dm.n_rows);
    let mut clusters = Vec::with_capacity(dm.n_rows);
    for draw in 0..g {
        let pick = rng.random_range(0..g);
        rows.extend_from_slice(&cluster_rows[pick]);
        clusters.extend(std::iter::repeat_n(draw, cluster_rows[pick].len()));
    }
    let resampled = dm.gather(&rows, clusters, g);
    Ok(fit_ols(&resampled)?.coefficients)
}

/// All replicate coefficient vectors, in replicate order.
pub fn replicates(
    dm: &DesignMatrix,
    replicates: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<Vec<Option<f64>>>, EstimatorError> {
    if replicates < 2 {
        return Err(EstimatorError::InvalidReplicates(replicates));
    }
    if dm.n_clusters < 2 {
        return Err(EstimatorError::InsufficientClusters(dm.n_clusters));
    }
    let cluster_rows = dm.cluster_rows();
    match execution {
        Execution::Serial => (0..replicates)
            .map(|b| replicate(dm, &cluster_rows, seed, b))
            .collect(),
        Execution::Parallel => (0..replicates)
            .into_par_iter()
            .map(|b| replicate(dm, &cluster_rows, seed, b))
            .collect(),
    }
}

/// Standard deviation and percentile interval of each column's replicate
/// estimates. Replicates in which a column is aliased are left out of that
/// column's summary and counted in `excluded`.
pub fn bootstrap_columns(
    dm: &DesignMatrix,
    b: usize,
    seed: u64,
    execution: Execution,
) -> Result<BootstrapResult, EstimatorError> {
    let reps = replicates(dm, b, seed, execution)?;
    let columns = (0..dm.n_cols())
        .map(|j| {
            let mut values: Vec<f64> = reps.iter().filter_map(|r| r[j]).collect();
            let used = values.len();
            let excluded = b - used;
            if excluded as f64 > MAX_EXCLUDED_SHARE * b as f64 || used < 2 {
                return ColumnBootstrap {
                    std_err: None,
                    lower: None,
                    upper: None,
                    used,
                    excluded,
                    diagnostic: Some(format!(
                        "inestimable in {excluded} of {b} bootstrap replicates"
                    )),
                };
            }
            let mean = values.iter().sum::<f64>() / used as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (used - 1) as f64;
            values.sort_by(f64::total_cmp);
            ColumnBootstrap {
                std_err: Some(var.sqrt()),
                lower: Some(quantile(&values, 0.025)),
                upper: Some(quantile(&values, 0.975)),
                used,
                excluded,
                diagnostic: (excluded > 0)
                    .then(|| format!("excluded from {excluded} of {b} bootstrap replicates")),
            }
        })
        .collect();
    Ok(BootstrapResult {
        replicates: b,
        seed,
        columns,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&v, 0.975), 4.9);
    }
}
