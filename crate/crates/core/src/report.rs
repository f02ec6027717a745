//! Text tables, plot series and SVG dot-whisker charts from estimate
//! tables. Every renderer is a pure function of its input.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{EstimateRow, EstimateTable, SIGNIF_LEGEND};

/// Normal quantile for a two-sided 95% interval.
pub const Z_95: f64 = 1.96;

pub const AMCE_TITLE: &str = "Average Marginal Component Effects (AMCE)";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("malformed estimate file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// One titled table in an estimate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitledTable {
    pub title: String,
    pub table: EstimateTable,
}

/// What `estimate` writes and `report` reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    pub tables: Vec<TitledTable>,
}

impl EstimateFile {
    pub fn single(title: impl Into<String>, table: EstimateTable) -> Self {
        Self {
            tables: vec![TitledTable {
                title: title.into(),
                table,
            }],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate tables serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }
}

const HEADER: [&str; 7] = ["Attribute", "Level", "Estimate", "Std. Err", "z value", "Pr(>|z|)", ""];

fn fmt_opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map_or_else(|| "NA".to_string(), f)
}

fn fmt_p(p: f64) -> String {
    if p != 0.0 && p < 1e-4 {
        format!("{p:.4e}")
    } else {
        format!("{p:.8}")
    }
}

fn cells(row: &EstimateRow) -> [String; 7] {
    [
        row.attribute.clone(),
        row.level.clone(),
        fmt_opt(row.estimate, |v| format!("{v:.7}")),
        fmt_opt(row.std_err, |v| format!("{v:.6}")),
        fmt_opt(row.z_value, |v| format!("{v:.6}")),
        fmt_opt(row.p_value, fmt_p),
        row.significance.clone(),
    ]
}

/// Fixed-column table: text columns left-aligned, numbers right-aligned,
/// then the observation counts and the significance legend.
pub fn render_estimate_table(table: &EstimateTable) -> String {
    let body: Vec<[String; 7]> = table.rows.iter().map(cells).collect();
    let mut widths = HEADER.map(|h| h.chars().count());
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cols: [&str; 7]| {
        let mut s = String::new();
        for (i, (c, w)) in cols.iter().zip(widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = w - c.chars().count();
            if (2..6).contains(&i) {
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            } else {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            }
        }
        s.trim_end().to_string()
    };
    let mut out = String::new();
    out.push_str(&line(HEADER));
    out.push('\n');
    for r in &body {
        out.push_str(&line(r.each_ref().map(String::as_str)));
        out.push('\n');
    }
    out.push('\n');
    if let Some(note) = &table.note {
        out.push_str(&format!("Note: {note}\n\n"));
    }
    for d in &table.diagnostics {
        out.push_str(&format!("Diagnostic: {d}\n"));
    }
    if !table.diagnostics.is_empty() {
        out.push('\n');
    }
    out.push_str(&format!("Number of Obs. = {}\n\n", table.n_observations));
    out.push_str(&format!("Number of Respondents = {}\n\n", table.n_respondents));
    out.push_str(SIGNIF_LEGEND);
    out.push('\n');
    out
}

/// Every table of a file, each under its title.
pub fn render_file(file: &EstimateFile) -> String {
    file.tables
        .iter()
        .map(|t| format!("{}:\n\n{}", t.title, render_estimate_table(&t.table)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One plotted point with its 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub label: String,
    pub attribute: String,
    pub estimate: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub na: bool,
}

pub fn plot_series(table: &EstimateTable) -> Vec<PlotSeries> {
    table
        .rows
        .iter()
        .map(|r| {
            let interval = match (r.estimate, r.std_err) {
                (Some(e), Some(s)) => Some((e - Z_95 * s, e + Z_95 * s)),
                _ => None,
            };
            PlotSeries {
                label: r.level.clone(),
                attribute: r.attribute.clone(),
                estimate: r.estimate,
                lower: interval.map(|i| i.0),
                upper: interval.map(|i| i.1),
                na: r.is_na(),
            }
        })
        .collect()
}

/// CSV with one line per series: `table,attribute,level,estimate,lower,upper,na`.
/// Missing numbers are written as `NA`.
pub fn plotdata_csv(file: &EstimateFile) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["table", "attribute", "level", "estimate", "lower", "upper", "na"])
        .expect("in-memory write");
    let num = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
    for t in &file.tables {
        for s in plot_series(&t.table) {
            w.write_record([
                t.title.clone(),
                s.attribute,
                s.label,
                num(s.estimate),
                num(s.lower),
                num(s.upper),
                s.na.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const ROW_H: f64 = 18.0;
const LABEL_W: f64 = 380.0;
const PLOT_W: f64 = 420.0;
const MARGIN: f64 = 20.0;

/// Dot-whisker chart of one table: a zero line, one row per level grouped
/// under attribute headings, NA levels labelled but not drawn.
pub fn render_svg(title: &str, table: &EstimateTable) -> String {
    let (body, height) = svg_panel(title, table);
    svg_document(&body, height)
}

/// Every table of a file as panels stacked top to bottom.
pub fn render_svg_file(file: &EstimateFile) -> String {
    let mut body = String::new();
    let mut offset = 0.0;
    for t in &file.tables {
        let (panel, height) = svg_panel(&t.title, &t.table);
        body.push_str(&format!("<g transform=\"translate(0,{offset})\">\n{panel}</g>\n"));
        offset += height;
    }
    svg_document(&body, offset)
}

const SVG_WIDTH: f64 = 2.0 * MARGIN + LABEL_W + PLOT_W;

fn svg_document(body: &str, height: f64) -> String {
    let width = SVG_WIDTH;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn svg_panel(title: &str, table: &EstimateTable) -> (String, f64) {
    let series = plot_series(table);
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for s in &series {
        for v in [s.lower, s.upper, s.estimate].into_iter().flatten() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if hi - lo < 1e-12 {
        lo -= 0.1;
        hi += 0.1;
    }
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);
    let x = |v: f64| MARGIN + LABEL_W + (v - lo) / (hi - lo) * PLOT_W;

    let mut rows = Vec::new();
    let mut last_attr: Option<&str> = None;
    for s in &series {
        if last_attr != Some(s.attribute.as_str()) {
            rows.push((true, s));
            last_attr = Some(&s.attribute);
        }
        rows.push((false, s));
    }
    let top = MARGIN + 2.0 * ROW_H;
    let height = top + rows.len() as f64 * ROW_H + 2.0 * ROW_H + MARGIN;

    let mut out = String::new();
    out.push_str(&format!(
        "<text x=\"{MARGIN}\" y=\"{}\" font-size=\"14\" font-weight=\"bold\">{}</text>\n",
        MARGIN + ROW_H * 0.8,
        escape(title)
    ));
    let bottom = top + rows.len() as f64 * ROW_H;
    out.push_str(&format!(
        "<line x1=\"{0:.2}\" y1=\"{top}\" x2=\"{0:.2}\" y2=\"{bottom}\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n",
        x(0.0)
    ));
    for (i, (heading, s)) in rows.iter().enumerate() {
        let y = top + i as f64 * ROW_H + ROW_H * 0.7;
        if *heading {
            out.push_str(&format!(
                "<text x=\"{MARGIN}\" y=\"{y:.2}\" font-weight=\"bold\">{}</text>\n",
                escape(&s.attribute)
            ));
            continue;
        }
        let label = if s.na {
            format!("{} (NA)", s.label)
        } else {
            s.label.clone()
        };
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{y:.2}\">{}</text>\n",
            MARGIN + 12.0,
            escape(&label)
        ));
        let cy = y - 4.0;
        if let (Some(l), Some(u)) = (s.lower, s.upper) {
            out.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{cy:.2}\" x2=\"{:.2}\" y2=\"{cy:.2}\" stroke=\"black\"/>\n",
                x(l),
                x(u)
            ));
        }
        if let Some(e) = s.estimate {
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{cy:.2}\" r=\"3\" fill=\"black\"/>\n",
                x(e)
            ));
        }
    }
    let axis_y = bottom + ROW_H;
    out.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{bottom}\" x2=\"{:.2}\" y2=\"{bottom}\" stroke=\"black\"/>\n",
        x(lo),
        x(hi)
    ));
    for v in [lo, 0.0, hi] {
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{axis_y:.2}\" text-anchor=\"middle\">{v:.3}</text>\n",
            x(v)
        ));
    }
    (out, height)
}
