//! AMCE, ACIE and conditional AMCE estimation.
//!
//! Estimates come from a linear probability model: the 0/1 choice outcome
//! regressed on an intercept and one dummy per non-baseline level. Each
//! level's coefficient is its AMCE against the attribute's baseline.
//! Uncertainty is either the respondent-clustered sandwich or a respondent
//! bootstrap; p-values use the normal reference distribution.

pub mod bootstrap;
pub mod inference;
pub mod matrix;
pub mod ols;
pub mod vcov;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ChoiceDataset, DatasetError};

pub use bootstrap::{bootstrap_columns, BootstrapResult, ColumnBootstrap, Execution};
pub use inference::{significance_code, z_and_p, SIGNIF_LEGEND};
pub use matrix::{encode_columns, encode_design_matrix, Column, DesignMatrix};
pub use ols::{fit_ols, OlsFit};
pub use vcov::{classical_vcov, cluster_robust_vcov, Covariance};

/// Marker placed on subgroup tables with fewer than two respondents.
pub const INSUFFICIENT_CLUSTERS: &str = "insufficient clusters";

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("dataset has no observations")]
    EmptyDataset,
    #[error("need at least 2 respondent clusters, have {0}")]
    InsufficientClusters(usize),
    #[error("{n} observations cannot support {k} coefficients")]
    InsufficientDegreesOfFreedom { n: usize, k: usize },
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("unknown level {0}")]
    UnknownLevel(String),
    #[error("level {0:?} never shown")]
    LevelNotShown(String),
    #[error("bootstrap needs at least 2 replicates, got {0}")]
    InvalidReplicates(usize),
    #[error("interaction needs two distinct attributes")]
    SameAttribute,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// How standard errors are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum VarianceMethod {
    ClusterRobust,
    Bootstrap { replicates: usize, seed: u64 },
}

/// One non-baseline level's estimate. Any numeric field may be NA (`None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub attribute: String,
    pub level: String,
    pub estimate: Option<f64>,
    pub std_err: Option<f64>,
    pub z_value: Option<f64>,
    pub p_value: Option<f64>,
    pub significance: String,
}

impl EstimateRow {
    pub fn new(attribute: String, level: String, estimate: Option<f64>, std_err: Option<f64>) -> Self {
        let zp = match (estimate, std_err) {
            (Some(e), Some(s)) => z_and_p(e, s),
            _ => None,
        };
        Self {
            attribute,
            level,
            estimate,
            std_err,
            z_value: zp.map(|(z, _)| z),
            p_value: zp.map(|(_, p)| p),
            significance: zp.map(|(_, p)| significance_code(p)).unwrap_or("").to_string(),
        }
    }

    pub fn na(attribute: String, level: String) -> Self {
        Self::new(attribute, level, None, None)
    }

    pub fn is_na(&self) -> bool {
        self.estimate.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateTable {
    pub rows: Vec<EstimateRow>,
    /// Choice probability of the all-baseline profile.
    pub intercept: Option<f64>,
    pub n_observations: usize,
    pub n_respondents: usize,
    pub variance: VarianceMethod,
    /// Set when the table could not be estimated, e.g. "insufficient clusters".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl EstimateTable {
    pub fn row(&self, attribute: &str, level: &str) -> Option<&EstimateRow> {
        self.rows
            .iter()
            .find(|r| r.attribute == attribute && r.level == level)
    }
}

/// Main effects and interaction terms from a fully interacted regression
/// for one attribute pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcieTable {
    pub first: String,
    pub second: String,
    pub main_effects: EstimateTable,
    /// Rows labelled `"A × B"` / `"a × b"`: the shift in level `a`'s AMCE
    /// when `B` shows `b` instead of its baseline.
    pub interactions: EstimateTable,
}

/// Per-column standard errors plus `(column, message)` diagnostics.
type StandardErrors = (Vec<Option<f64>>, Vec<(usize, String)>);

fn standard_errors(
    dm: &DesignMatrix,
    fit: &OlsFit,
    variance: VarianceMethod,
) -> Result<StandardErrors, EstimatorError> {
    match variance {
        VarianceMethod::ClusterRobust => {
            let v = cluster_robust_vcov(dm, fit)?;
            Ok(((0..dm.n_cols()).map(|j| v.std_error(j)).collect(), Vec::new()))
        }
        VarianceMethod::Bootstrap { replicates, seed } => {
            let boot = bootstrap_columns(dm, replicates, seed, Execution::Parallel)?;
            let diagnostics = boot
                .columns
                .iter()
                .enumerate()
                .filter_map(|(j, c)| c.diagnostic.clone().map(|d| (j, d)))
                .collect();
            Ok((boot.columns.iter().map(|c| c.std_err).collect(), diagnostics))
        }
    }
}

/// Fits `columns` and assembles rows for every non-intercept column.
fn estimate_columns(
    dataset: &ChoiceDataset,
    columns: Vec<Column>,
    variance: VarianceMethod,
) -> Result<(EstimateTable, DesignMatrix), EstimatorError> {
    if dataset.n_respondents() < 2 {
        return Err(EstimatorError::InsufficientClusters(dataset.n_respondents()));
    }
    let spec = dataset.design().clone();
    let dm = encode_columns(dataset, columns)?;
    let fit = fit_ols(&dm)?;
    let (se, diagnostics) = standard_errors(&dm, &fit, variance)?;
    let diagnostics = diagnostics
        .into_iter()
        .map(|(j, d)| {
            let (a, l) = dm.columns[j].labels(&spec);
            format!("{a} / {l}: {d}")
        })
        .collect();
    let rows = dm
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != Column::Intercept)
        .map(|(j, c)| {
            let (attribute, level) = c.labels(&spec);
            match fit.coefficients[j] {
                Some(est) => EstimateRow::new(attribute, level, Some(est), se[j]),
                None => EstimateRow::na(attribute, level),
            }
        })
        .collect();
    let intercept = dm
        .columns
        .iter()
        .position(|c| *c == Column::Intercept)
        .and_then(|j| fit.coefficients[j]);
    Ok((
        EstimateTable {
            rows,
            intercept,
            n_observations: dataset.n_rows(),
            n_respondents: dataset.n_respondents(),
            variance,
            note: None,
            diagnostics,
        },
        dm,
    ))
}

/// AMCEs for every non-baseline level from the full dummy regression.
pub fn estimate_amce(dataset: &ChoiceDataset, variance: VarianceMethod) -> Result<EstimateTable, EstimatorError> {
    let columns = matrix::main_effect_columns(dataset.design());
    Ok(estimate_columns(dataset, columns, variance)?.0)
}

/// An all-NA table carrying the "insufficient clusters" marker.
pub fn insufficient_table(dataset: &ChoiceDataset, variance: VarianceMethod) -> EstimateTable {
    let spec = dataset.design();
    let rows = matrix::main_effect_columns(spec)
        .iter()
        .filter(|c| **c != Column::Intercept)
        .map(|c| {
            let (a, l) = c.labels(spec);
            EstimateRow::na(a, l)
        })
        .collect();
    EstimateTable {
        rows,
        intercept: None,
        n_observations: dataset.n_rows(),
        n_respondents: dataset.n_respondents(),
        variance,
        note: Some(INSUFFICIENT_CLUSTERS.to_string()),
        diagnostics: Vec::new(),
    }
}

/// AMCEs within each observed value of a respondent covariate, with the
/// global baselines. Levels missing from a subgroup are NA; subgroups with
/// fewer than two respondents get an all-NA table marked
/// [`INSUFFICIENT_CLUSTERS`].
pub fn estimate_conditional(
    dataset: &ChoiceDataset,
    covariate: &str,
    variance: VarianceMethod,
) -> Result<IndexMap<String, EstimateTable>, EstimatorError> {
    let values = dataset.covariate_values(covariate)?;
    let mut out = IndexMap::new();
    for v in values {
        let sub = dataset.subset(covariate, &v)?;
        let table = if sub.n_respondents() < 2 {
            insufficient_table(&sub, variance)
        } else {
            match estimate_amce(&sub, variance) {
                Ok(t) => t,
                Err(EstimatorError::InsufficientDegreesOfFreedom { .. }) => {
                    insufficient_table(&sub, variance)
                }
                Err(e) => return Err(e),
            }
        };
        out.insert(v, table);
    }
    Ok(out)
}

/// Main effects for every attribute plus interaction dummies for one pair.
pub fn estimate_acie(
    dataset: &ChoiceDataset,
    first: &str,
    second: &str,
    variance: VarianceMethod,
) -> Result<AcieTable, EstimatorError> {
    let spec = dataset.design().clone();
    let a = spec
        .attribute_index(first)
        .ok_or_else(|| EstimatorError::UnknownAttribute(first.to_string()))?;
    let b = spec
        .attribute_index(second)
        .ok_or_else(|| EstimatorError::UnknownAttribute(second.to_string()))?;
    if a == b {
        return Err(EstimatorError::SameAttribute);
    }
    let mut columns = matrix::main_effect_columns(&spec);
    let n_main = columns.len();
    columns.extend(matrix::interaction_columns(&spec, a, b));
    let (table, _) = estimate_columns(dataset, columns, variance)?;
    let (main_rows, inter_rows) = {
        let mut rows = table.rows;
        let inter = rows.split_off(n_main - 1);
        (rows, inter)
    };
    let split = |rows: Vec<EstimateRow>, intercept| EstimateTable {
        rows,
        intercept,
        n_observations: table.n_observations,
        n_respondents: table.n_respondents,
        variance,
        note: None,
        diagnostics: table.diagnostics.clone(),
    };
    Ok(AcieTable {
        first: first.to_string(),
        second: second.to_string(),
        main_effects: split(main_rows, table.intercept),
        interactions: split(inter_rows, None),
    })
}

/// `mean(Y | level shown) - mean(Y | baseline shown)`.
pub fn amce_diff_in_means(dataset: &ChoiceDataset, attribute: &str, level: &str) -> Result<f64, EstimatorError> {
    let spec = dataset.design();
    let a = spec
        .attribute_index(attribute)
        .ok_or_else(|| EstimatorError::UnknownAttribute(attribute.to_string()))?;
    let attr = &spec.attributes[a];
    let l = attr
        .level_index(level)
        .ok_or_else(|| EstimatorError::UnknownLevel(format!("{attribute}={level}")))?;
    let base = attr.baseline_index();
    let (mut sum_l, mut n_l, mut sum_b, mut n_b) = (0.0, 0usize, 0.0, 0usize);
    for (i, row) in dataset.rows().iter().enumerate() {
        let shown = dataset.row_levels(i)[a] as usize;
        let y = if row.chosen { 1.0 } else { 0.0 };
        if shown == l {
            sum_l += y;
            n_l += 1;
        }
        if shown == base {
            sum_b += y;
            n_b += 1;
        }
    }
    if n_l == 0 {
        return Err(EstimatorError::LevelNotShown(level.to_string()));
    }
    if n_b == 0 {
        return Err(EstimatorError::LevelNotShown(attr.baseline.clone()));
    }
    Ok(sum_l / n_l as f64 - sum_b / n_b as f64)
}

/// Respondent-bootstrap SEs and percentile intervals per non-baseline level.
pub fn bootstrap_se(
    dataset: &ChoiceDataset,
    replicates: usize,
    seed: u64,
    execution: Execution,
) -> Result<IndexMap<(String, String), ColumnBootstrap>, EstimatorError> {
    if dataset.n_respondents() < 2 {
        return Err(EstimatorError::InsufficientClusters(dataset.n_respondents()));
    }
    let dm = encode_design_matrix(dataset)?;
    let result = bootstrap_columns(&dm, replicates, seed, execution)?;
    Ok(dm
        .columns
        .iter()
        .zip(result.columns)
        .filter(|(c, _)| **c != Column::Intercept)
        .map(|(c, b)| (c.labels(dataset.design()), b))
        .collect())
}
