//! Dummy coding of choice data.

use std::collections::HashMap;

use crate::dataset::ChoiceDataset;
use crate::design::DesignSpec;

use super::EstimatorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Intercept,
    /// Indicator for one non-baseline level.
    Level { attribute: usize, level: usize },
    /// Product of two level indicators from different attributes.
    Interaction {
        first: (usize, usize),
        second: (usize, usize),
    },
}

impl Column {
    /// `(attribute, level)` display labels.
    pub fn labels(&self, spec: &DesignSpec) -> (String, String) {
        let name = |a: usize, l: usize| {
            let attr = &spec.attributes[a];
            (attr.name.clone(), attr.levels[l].name.clone())
        };
        match *self {
            Column::Intercept => ("(Intercept)".into(), String::new()),
            Column::Level { attribute, level } => name(attribute, level),
            Column::Interaction { first, second } => {
                let (a1, l1) = name(first.0, first.1);
                let (a2, l2) = name(second.0, second.1);
                (format!("{a1} × {a2}"), format!("{l1} × {l2}"))
            }
        }
    }
}

/// Outcome, regressors and clusters for the linear probability model.
/// `x` is column-major.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub n_rows: usize,
    pub columns: Vec<Column>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Cluster (respondent) per row, numbered `0..n_clusters`.
    pub clusters: Vec<usize>,
    pub n_clusters: usize,
}

impl DesignMatrix {
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.x[j * self.n_rows..(j + 1) * self.n_rows]
    }

    /// Row indices belonging to each cluster, in row order.
    pub fn cluster_rows(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (i, &g) in self.clusters.iter().enumerate() {
            out[g].push(i);
        }
        out
    }

    /// A new matrix built from the given rows, in the given order, with
    /// the supplied cluster ids.
    pub fn gather(&self, rows: &[usize], clusters: Vec<usize>, n_clusters: usize) -> DesignMatrix {
        let n = rows.len();
        let mut x = Vec::with_capacity(n * self.n_cols());
        for j in 0..self.n_cols() {
            let col = self.col(j);
            x.extend(rows.iter().map(|&i| col[i]));
        }
        DesignMatrix {
            n_rows: n,
            columns: self.columns.clone(),
            x,
            y: rows.iter().map(|&i| self.y[i]).collect(),
            clusters,
            n_clusters,
        }
    }
}

/// Regressor columns for a design: intercept, then each attribute's
/// non-baseline levels in design order.
pub fn main_effect_columns(spec: &DesignSpec) -> Vec<Column> {
    let mut cols = vec![Column::Intercept];
    for (a, attr) in spec.attributes.iter().enumerate() {
        cols.extend(
            attr.non_baseline_levels()
                .map(|(level, _)| Column::Level { attribute: a, level }),
        );
    }
    cols
}

/// Interaction columns for every pair of non-baseline levels of two
/// attributes, first attribute outermost.
pub fn interaction_columns(spec: &DesignSpec, first: usize, second: usize) -> Vec<Column> {
    let mut cols = Vec::new();
    for (l1, _) in spec.attributes[first].non_baseline_levels() {
        for (l2, _) in spec.attributes[second].non_baseline_levels() {
            cols.push(Column::Interaction {
                first: (first, l1),
                second: (second, l2),
            });
        }
    }
    cols
}

pub fn encode_design_matrix(dataset: &ChoiceDataset) -> Result<DesignMatrix, EstimatorError> {
    encode_columns(dataset, main_effect_columns(dataset.design()))
}

/// Encodes arbitrary columns. Clusters are numbered by first appearance.
pub fn encode_columns(
    dataset: &ChoiceDataset,
    columns: Vec<Column>,
) -> Result<DesignMatrix, EstimatorError> {
    let n = dataset.n_rows();
    if n == 0 {
        return Err(EstimatorError::EmptyDataset);
    }
    let spec = dataset.design();
    for c in &columns {
        let ok = |a: usize, l: usize| a < spec.attributes.len() && l < spec.attributes[a].levels.len();
        let valid = match *c {
            Column::Intercept => true,
            Column::Level { attribute, level } => ok(attribute, level),
            Column::Interaction { first, second } => ok(first.0, first.1) && ok(second.0, second.1),
        };
        if !valid {
            return Err(EstimatorError::UnknownLevel(format!("{c:?}")));
        }
    }
    let mut x = vec![0.0; n * columns.len()];
    for (j, c) in columns.iter().enumerate() {
        let col = &mut x[j * n..(j + 1) * n];
        for (i, v) in col.iter_mut().enumerate() {
            let lv = dataset.row_levels(i);
            let on = match *c {
                Column::Intercept => true,
                Column::Level { attribute, level } => lv[attribute] as usize == level,
                Column::Interaction { first, second } => {
                    lv[first.0] as usize == first.1 && lv[second.0] as usize == second.1
                }
            };
            *v = if on { 1.0 } else { 0.0 };
        }
    }
    let mut ids: HashMap<usize, usize> = HashMap::new();
    let clusters = dataset
        .rows()
        .iter()
        .map(|r| {
            let next = ids.len();
            *ids.entry(r.respondent).or_insert(next)
        })
        .collect();
    Ok(DesignMatrix {
        n_rows: n,
        columns,
        x,
        y: dataset.rows().iter().map(|r| if r.chosen { 1.0 } else { 0.0 }).collect(),
        clusters,
        n_clusters: ids.len(),
    })
}
