#![allow(dead_code)]

use std::sync::Arc;

use conjoint_core::dataset::{ChoiceDataset, Observation};
use conjoint_core::design::{parse_design, DesignSpec};

/// Uniform toy design. Attribute `i` is named `A`, `B`, ... with levels
/// `a1`, `a2`, ...; the first level is the baseline. One questionnaire
/// item `group` with options `x` and `y`.
pub fn toy(levels: &[usize], tasks: usize) -> Arc<DesignSpec> {
    Arc::new(parse_design(&toy_text(levels, tasks, "")).unwrap())
}

pub fn toy_text(levels: &[usize], tasks: usize, extra: &str) -> String {
    let mut s = format!("tasks_per_respondent = {tasks}\n{extra}\n");
    for (i, &n) in levels.iter().enumerate() {
        let names: Vec<String> = (0..n)
            .map(|j| format!("\"{}{}\"", (b'a' + i as u8) as char, j + 1))
            .collect();
        s.push_str(&format!(
            "[[attributes]]\nname = \"{}\"\nlevels = [{}]\n",
            (b'A' + i as u8) as char,
            names.join(",")
        ));
    }
    s.push_str(
        "[[questionnaire]]\nid = \"q1\"\nkey = \"group\"\nprompt = \"Group?\"\noptions = [\"x\", \"y\"]\n",
    );
    s
}

pub fn key(a: &str, l: &str) -> (String, String) {
    (a.to_string(), l.to_string())
}

/// Same observations with respondents and rows in a different order.
pub fn permuted(ds: &ChoiceDataset, respondent_order: &[usize], row_order: &[usize]) -> ChoiceDataset {
    let mut new_index = vec![0; respondent_order.len()];
    for (new, &old) in respondent_order.iter().enumerate() {
        new_index[old] = new;
    }
    let respondents = respondent_order
        .iter()
        .map(|&i| ds.respondents()[i].clone())
        .collect();
    let mut rows = Vec::new();
    let mut levels = Vec::new();
    for &i in row_order {
        let r = ds.rows()[i];
        rows.push(Observation {
            respondent: new_index[r.respondent],
            ..r
        });
        levels.extend_from_slice(ds.row_levels(i));
    }
    ChoiceDataset::from_parts(ds.design().clone(), respondents, rows, levels).unwrap()
}

/// Dense matrix inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs()))
            .unwrap();
        a.swap(c, piv);
        let d = a[c][c];
        for e in a[c].iter_mut() {
            *e /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                let rc = a[c].clone();
                for (e, v) in a[r].iter_mut().zip(rc) {
                    *e -= f * v;
                }
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for k in 0..m {
            for j in 0..p {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Row-wise dummy encoding of a dataset (intercept first, then each
/// non-baseline level in design order), built without the library's
/// encoder.
pub fn dummy_rows(ds: &ChoiceDataset) -> Vec<Vec<f64>> {
    let spec = ds.design();
    (0..ds.n_rows())
        .map(|i| {
            let mut x = vec![1.0];
            for (a, attr) in spec.attributes.iter().enumerate() {
                let shown = ds.row_levels(i)[a] as usize;
                for l in 0..attr.levels.len() {
                    if l != attr.baseline_index() {
                        x.push(if shown == l { 1.0 } else { 0.0 });
                    }
                }
            }
            x
        })
        .collect()
}

/// Coefficients and CR1 standard errors from textbook normal equations.
pub fn naive_cr1(ds: &ChoiceDataset) -> (Vec<f64>, Vec<f64>) {
    let x = dummy_rows(ds);
    let y: Vec<f64> = ds.rows().iter().map(|r| r.chosen as u8 as f64).collect();
    let p = x[0].len();
    let n = x.len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, &yi) in x.iter().zip(&y) {
        for a in 0..p {
            xty[a] += row[a] * yi;
            for b in 0..p {
                xtx[a][b] += row[a] * row[b];
            }
        }
    }
    let inv = invert(&xtx);
    let beta: Vec<f64> = (0..p).map(|a| (0..p).map(|b| inv[a][b] * xty[b]).sum()).collect();
    let g = ds.n_respondents();
    let mut scores = vec![vec![0.0; p]; g];
    for (i, row) in x.iter().enumerate() {
        let e = y[i] - row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        for a in 0..p {
            scores[ds.rows()[i].respondent][a] += row[a] * e;
        }
    }
    let mut meat = vec![vec![0.0; p]; p];
    for s in &scores {
        for a in 0..p {
            for b in 0..p {
                meat[a][b] += s[a] * s[b];
            }
        }
    }
    let v = matmul(&matmul(&inv, &meat), &inv);
    let c = g as f64 / (g as f64 - 1.0) * (n as f64 - 1.0) / (n as f64 - p as f64);
    let se = (0..p).map(|a| (v[a][a] * c).sqrt()).collect();
    (beta, se)
}
