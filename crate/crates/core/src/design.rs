//! Experiment designs: attributes, weighted levels, baselines, prohibited
//! pairs and the respondent questionnaire.
//!
//! Designs are read from TOML. Omitted level probabilities share whatever
//! mass the listed ones leave over, and an omitted baseline defaults to the
//! first-listed level. [`DesignSpec::to_toml`] writes the normalized form
//! with every default spelled out.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the per-attribute probability sum.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

/// The bundled reference design (nine candidate attributes, 45 levels).
pub const BUNDLED_DESIGN: &str = include_str!("../../../designs/villa-turek-2022.design");

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSpec {
    pub name: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSpec {
    pub name: String,
    pub levels: Vec<LevelSpec>,
    pub baseline: String,
}

impl AttributeSpec {
    pub fn level_index(&self, name: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.name == name)
    }

    /// Position of the baseline level. Panics if the baseline is dangling,
    /// which parsing and validation rule out.
    pub fn baseline_index(&self) -> usize {
        self.level_index(&self.baseline)
            .unwrap_or_else(|| panic!("baseline {:?} missing from {:?}", self.baseline, self.name))
    }

    /// Non-baseline levels in design order, with their positions.
    pub fn non_baseline_levels(&self) -> impl Iterator<Item = (usize, &LevelSpec)> {
        let base = self.baseline.as_str();
        self.levels
            .iter()
            .enumerate()
            .filter(move |(_, l)| l.name != base)
    }
}

/// One `(attribute, level)` reference by name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelRef {
    pub attribute: String,
    pub level: String,
}

impl LevelRef {
    pub fn new(attribute: impl Into<String>, level: impl Into<String>) -> Self {
        Self {
            attribute: attribute.into(),
            level: level.into(),
        }
    }
}

impl fmt::Display for LevelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.attribute, self.level)
    }
}

/// Two levels of different attributes that may never share a profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProhibitedPair {
    pub first: LevelRef,
    pub second: LevelRef,
}

/// Order in which attribute rows are displayed within a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderPolicy {
    /// Design order, every task, every respondent.
    #[default]
    Fixed,
    /// One permutation per respondent, reused for all of their tasks.
    ShuffledPerRespondent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseFormat {
    /// Integer scale, both ends inclusive.
    Scale { min: i64, max: i64 },
    Options(Vec<String>),
}

/// A mandatory respondent question. `key` names the covariate column
/// (`resp_<key>`) the answer lands in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub id: String,
    pub key: String,
    pub prompt: String,
    pub response: ResponseFormat,
}

impl Question {
    /// Checks an answer against the response format and returns its
    /// canonical string form.
    pub fn normalize_answer(&self, raw: &str) -> Result<String, String> {
        let raw = raw.trim();
        match &self.response {
            ResponseFormat::Scale { min, max } => {
                let v: i64 = raw
                    .parse()
                    .map_err(|_| format!("{}: expected an integer, got {raw:?}", self.id))?;
                if v < *min || v > *max {
                    return Err(format!("{}: {v} outside scale {min}..={max}", self.id));
                }
                Ok(v.to_string())
            }
            ResponseFormat::Options(opts) => {
                if opts.iter().any(|o| o == raw) {
                    Ok(raw.to_string())
                } else {
                    Err(format!("{}: {raw:?} is not a listed option", self.id))
                }
            }
        }
    }

    /// Every admissible answer, in canonical form.
    pub fn answer_values(&self) -> Vec<String> {
        match &self.response {
            ResponseFormat::Scale { min, max } => (*min..=*max).map(|v| v.to_string()).collect(),
            ResponseFormat::Options(opts) => opts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub attributes: Vec<AttributeSpec>,
    pub profiles_per_task: usize,
    pub tasks_per_respondent: usize,
    pub order_policy: OrderPolicy,
    pub prohibited_pairs: Vec<ProhibitedPair>,
    pub questionnaire: Vec<Question>,
}

impl DesignSpec {
    /// Parses and normalizes the bundled reference design.
    pub fn bundled() -> Self {
        parse_design(BUNDLED_DESIGN).expect("bundled design parses")
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name == name)
    }

    /// Resolves a level reference to `(attribute index, level index)`.
    pub fn resolve(&self, r: &LevelRef) -> Option<(usize, usize)> {
        let a = self.attribute_index(&r.attribute)?;
        let l = self.attributes[a].level_index(&r.level)?;
        Some((a, l))
    }

    pub fn question_by_key(&self, key: &str) -> Option<&Question> {
        self.questionnaire.iter().find(|q| q.key == key)
    }

    /// Level counts in attribute order.
    pub fn cardinalities(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| a.levels.len()).collect()
    }

    pub fn total_level_count(&self) -> usize {
        total_level_count(self)
    }

    /// Columns of the dummy-coded regression: intercept plus one per
    /// non-baseline level.
    pub fn dummy_column_count(&self) -> usize {
        1 + self.total_level_count() - self.attributes.len()
    }

    /// Prohibited pairs resolved to indices. Unresolvable pairs are skipped.
    pub fn resolved_prohibitions(&self) -> Vec<((usize, usize), (usize, usize))> {
        self.prohibited_pairs
            .iter()
            .filter_map(|p| Some((self.resolve(&p.first)?, self.resolve(&p.second)?)))
            .collect()
    }

    /// Writes the normalized design as TOML.
    pub fn to_toml(&self) -> String {
        let file = DesignFile::from(self);
        toml::to_string_pretty(&file).expect("design serializes")
    }
}

pub fn total_level_count(spec: &DesignSpec) -> usize {
    spec.attributes.iter().map(|a| a.levels.len()).sum()
}

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("syntax error{}: {message}", line_suffix(*line))]
    Syntax { line: Option<usize>, message: String },
    #[error("unknown field{}: {message}", line_suffix(*line))]
    UnknownField { line: Option<usize>, message: String },
    #[error("duplicate {kind} name {name:?}")]
    Duplicate { kind: &'static str, name: String },
    #[error("attribute {attribute:?}: baseline {baseline:?} is not one of its levels")]
    UnknownBaseline { attribute: String, baseline: String },
    #[error("prohibited pair references unknown level {0}")]
    UnknownReference(LevelRef),
    #[error("question {id:?}: {message}")]
    Question { id: String, message: String },
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

// File representation. Everything optional that has a default.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    profiles_per_task: Option<usize>,
    tasks_per_respondent: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    order_policy: Option<OrderPolicy>,
    #[serde(default)]
    attributes: Vec<AttributeFile>,
    #[serde(default)]
    prohibited_pairs: Vec<ProhibitedPair>,
    #[serde(default)]
    questionnaire: Vec<QuestionFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeFile {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    baseline: Option<String>,
    levels: Vec<LevelFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum LevelFile {
    Name(String),
    Weighted(WeightedLevelFile),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightedLevelFile {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probability: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionFile {
    id: String,
    key: String,
    prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<ScaleFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    options: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScaleFile {
    min: i64,
    max: i64,
}

impl From<&DesignSpec> for DesignFile {
    fn from(spec: &DesignSpec) -> Self {
        DesignFile {
            profiles_per_task: Some(spec.profiles_per_task),
            tasks_per_respondent: spec.tasks_per_respondent,
            order_policy: Some(spec.order_policy),
            attributes: spec
                .attributes
                .iter()
                .map(|a| AttributeFile {
                    name: a.name.clone(),
                    baseline: Some(a.baseline.clone()),
                    levels: a
                        .levels
                        .iter()
                        .map(|l| {
                            LevelFile::Weighted(WeightedLevelFile {
                                name: l.name.clone(),
                                probability: Some(l.probability),
                            })
                        })
                        .collect(),
                })
                .collect(),
            prohibited_pairs: spec.prohibited_pairs.clone(),
            questionnaire: spec
                .questionnaire
                .iter()
                .map(|q| {
                    let (scale, options) = match &q.response {
                        ResponseFormat::Scale { min, max } => {
                            (Some(ScaleFile { min: *min, max: *max }), None)
                        }
                        ResponseFormat::Options(o) => (None, Some(o.clone())),
                    };
                    QuestionFile {
                        id: q.id.clone(),
                        key: q.key.clone(),
                        prompt: q.prompt.clone(),
                        scale,
                        options,
                    }
                })
                .collect(),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses a design file and applies defaults.
///
/// Structural problems (syntax, unknown fields, duplicate names, dangling
/// references) are errors. Numeric problems such as probabilities that do
/// not sum to one come back from [`validate_design`] instead.
pub fn parse_design(text: &str) -> Result<DesignSpec, DesignError> {
    let file: DesignFile = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start));
        let message = e.message().trim().to_string();
        if message.contains("unknown field") {
            DesignError::UnknownField { line, message }
        } else {
            DesignError::Syntax { line, message }
        }
    })?;

    let mut attributes = Vec::with_capacity(file.attributes.len());
    let mut seen_attrs = HashSet::new();
    for af in file.attributes {
        if !seen_attrs.insert(af.name.clone()) {
            return Err(DesignError::Duplicate {
                kind: "attribute",
                name: af.name,
            });
        }
        let mut seen_levels = HashSet::new();
        let mut names = Vec::with_capacity(af.levels.len());
        let mut given = Vec::with_capacity(af.levels.len());
        for lf in af.levels {
            let (name, p) = match lf {
                LevelFile::Name(n) => (n, None),
                LevelFile::Weighted(w) => (w.name, w.probability),
            };
            if !seen_levels.insert(name.clone()) {
                return Err(DesignError::Duplicate {
                    kind: "level",
                    name: format!("{}/{}", af.name, name),
                });
            }
            names.push(name);
            given.push(p);
        }
        // Unlisted probabilities share the leftover mass evenly.
        let listed: f64 = given.iter().flatten().sum();
        let unlisted = given.iter().filter(|p| p.is_none()).count();
        let share = if unlisted > 0 {
            (1.0 - listed) / unlisted as f64
        } else {
            0.0
        };
        let levels: Vec<LevelSpec> = names
            .into_iter()
            .zip(given)
            .map(|(name, p)| LevelSpec {
                name,
                probability: p.unwrap_or(share),
            })
            .collect();
        let baseline = match af.baseline {
            Some(b) => {
                if !levels.iter().any(|l| l.name == b) {
                    return Err(DesignError::UnknownBaseline {
                        attribute: af.name,
                        baseline: b,
                    });
                }
                b
            }
            None => levels.first().map(|l| l.name.clone()).unwrap_or_default(),
        };
        attributes.push(AttributeSpec {
            name: af.name,
            levels,
            baseline,
        });
    }

    let mut questionnaire = Vec::with_capacity(file.questionnaire.len());
    let mut seen_ids = HashSet::new();
    let mut seen_keys = HashSet::new();
    for qf in file.questionnaire {
        if !seen_ids.insert(qf.id.clone()) {
            return Err(DesignError::Duplicate {
                kind: "question id",
                name: qf.id,
            });
        }
        if !seen_keys.insert(qf.key.clone()) {
            return Err(DesignError::Duplicate {
                kind: "question key",
                name: qf.key,
            });
        }
        let response = match (qf.scale, qf.options) {
            (Some(s), None) => ResponseFormat::Scale {
                min: s.min,
                max: s.max,
            },
            (None, Some(o)) => ResponseFormat::Options(o),
            _ => {
                return Err(DesignError::Question {
                    id: qf.id,
                    message: "exactly one of `scale` or `options` is required".into(),
                })
            }
        };
        questionnaire.push(Question {
            id: qf.id,
            key: qf.key,
            prompt: qf.prompt,
            response,
        });
    }

    let spec = DesignSpec {
        attributes,
        profiles_per_task: file.profiles_per_task.unwrap_or(2),
        tasks_per_respondent: file.tasks_per_respondent,
        order_policy: file.order_policy.unwrap_or_default(),
        prohibited_pairs: file.prohibited_pairs,
        questionnaire,
    };
    for pair in &spec.prohibited_pairs {
        for r in [&pair.first, &pair.second] {
            if spec.resolve(r).is_none() {
                return Err(DesignError::UnknownReference(r.clone()));
            }
        }
    }
    Ok(spec)
}

/// One violated design invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Where in the design, e.g. `attribute "Age"`.
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

fn fmt_sum(x: f64) -> String {
    let s = format!("{x:.10}");
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_string()
}

/// Reports every violated invariant; an empty list means the design is valid.
pub fn validate_design(spec: &DesignSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |location: String, message: String| out.push(Violation { location, message });

    if spec.attributes.is_empty() {
        push("design".into(), "no attributes".into());
    }
    if spec.profiles_per_task < 2 {
        push(
            "design".into(),
            format!("profiles_per_task is {}, need at least 2", spec.profiles_per_task),
        );
    }
    if spec.tasks_per_respondent < 1 {
        push("design".into(), "tasks_per_respondent must be at least 1".into());
    }

    let mut attr_names = HashSet::new();
    for attr in &spec.attributes {
        let loc = format!("attribute {:?}", attr.name);
        if attr.name.trim().is_empty() {
            push(loc.clone(), "empty attribute name".into());
        }
        if !attr_names.insert(attr.name.as_str()) {
            push(loc.clone(), "duplicate attribute name".into());
        }
        if attr.levels.len() < 2 {
            push(loc.clone(), format!("has {} level(s), need at least 2", attr.levels.len()));
        }
        let mut level_names = HashSet::new();
        for level in &attr.levels {
            if level.name.trim().is_empty() {
                push(loc.clone(), "empty level name".into());
            }
            if !level_names.insert(level.name.as_str()) {
                push(loc.clone(), format!("duplicate level {:?}", level.name));
            }
            if !(level.probability > 0.0 && level.probability <= 1.0) {
                push(
                    loc.clone(),
                    format!(
                        "level {:?} has probability {}, must be in (0, 1]",
                        level.name, level.probability
                    ),
                );
            }
        }
        let sum: f64 = attr.levels.iter().map(|l| l.probability).sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            push(loc.clone(), format!("probabilities sum to {}", fmt_sum(sum)));
        }
        if attr.level_index(&attr.baseline).is_none() {
            push(loc.clone(), format!("baseline {:?} is not one of its levels", attr.baseline));
        }
    }

    let mut pairs_ok = true;
    for (i, pair) in spec.prohibited_pairs.iter().enumerate() {
        let loc = format!("prohibited pair {}", i + 1);
        for r in [&pair.first, &pair.second] {
            if spec.resolve(r).is_none() {
                push(loc.clone(), format!("unknown level {r}"));
                pairs_ok = false;
            }
        }
        if pair.first.attribute == pair.second.attribute {
            push(loc, format!("both sides name attribute {:?}", pair.first.attribute));
            pairs_ok = false;
        }
    }
    if pairs_ok && !spec.prohibited_pairs.is_empty() {
        for (a, l) in unreachable_levels(spec) {
            let attr = &spec.attributes[a];
            push(
                format!("attribute {:?}", attr.name),
                format!("level {:?} unreachable under prohibited pairs", attr.levels[l].name),
            );
        }
    }

    let mut ids = HashSet::new();
    let mut keys = HashSet::new();
    for q in &spec.questionnaire {
        let loc = format!("question {:?}", q.id);
        if !ids.insert(q.id.as_str()) {
            push(loc.clone(), "duplicate question id".into());
        }
        if !keys.insert(q.key.as_str()) {
            push(loc.clone(), format!("duplicate question key {:?}", q.key));
        }
        if q.prompt.trim().is_empty() {
            push(loc.clone(), "empty prompt".into());
        }
        match &q.response {
            ResponseFormat::Scale { min, max } if min >= max => {
                push(loc, format!("scale {min}..={max} is empty or degenerate"))
            }
            ResponseFormat::Options(o) if o.is_empty() => push(loc, "no response options".into()),
            _ => {}
        }
    }
    out
}

/// Levels that no complete profile can carry without containing a
/// prohibited pair. Exhaustive backtracking over partial profiles.
pub fn unreachable_levels(spec: &DesignSpec) -> Vec<(usize, usize)> {
    let n = spec.attributes.len();
    let banned = spec.resolved_prohibitions();
    let forbids = |a: (usize, usize), b: (usize, usize)| {
        banned
            .iter()
            .any(|&(x, y)| (x == a && y == b) || (x == b && y == a))
    };

    fn extend(
        spec: &DesignSpec,
        assigned: &mut Vec<Option<usize>>,
        attr: usize,
        forbids: &dyn Fn((usize, usize), (usize, usize)) -> bool,
    ) -> bool {
        if attr == assigned.len() {
            return true;
        }
        if let Some(l) = assigned[attr] {
            let ok = (0..attr).all(|o| !forbids((o, assigned[o].unwrap()), (attr, l)));
            return ok && extend(spec, assigned, attr + 1, forbids);
        }
        for l in 0..spec.attributes[attr].levels.len() {
            let ok = (0..assigned.len())
                .filter(|&o| o < attr || (o > attr && assigned[o].is_some()))
                .all(|o| !forbids((o, assigned[o].unwrap()), (attr, l)));
            if ok {
                assigned[attr] = Some(l);
                if extend(spec, assigned, attr + 1, forbids) {
                    assigned[attr] = None;
                    return true;
                }
                assigned[attr] = None;
            }
        }
        false
    }

    let mut out = Vec::new();
    for a in 0..n {
        for l in 0..spec.attributes[a].levels.len() {
            let mut assigned = vec![None; n];
            assigned[a] = Some(l);
            if !extend(spec, &mut assigned, 0, &forbids) {
                out.push((a, l));
            }
        }
    }
    out
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn arb_spec() -> impl Strategy<Value = DesignSpec> {
        let attr = (2usize..5).prop_flat_map(|n| {
            (
                proptest::collection::vec(1u32..100, n),
                0..n,
            )
        });
        (proptest::collection::vec(attr, 1..5), 2usize..4, 1usize..12, any::<bool>()).prop_map(
            |(attrs, ppt, tasks, shuffled)| DesignSpec {
                attributes: attrs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (weights, base))| {
                        let total: u32 = weights.iter().sum();
                        let levels: Vec<LevelSpec> = weights
                            .iter()
                            .enumerate()
                            .map(|(j, w)| LevelSpec {
                                name: format!("level {i}.{j}"),
                                probability: *w as f64 / total as f64,
                            })
                            .collect();
                        AttributeSpec {
                            name: format!("attr {i}"),
                            baseline: levels[base].name.clone(),
                            levels,
                        }
                    })
                    .collect(),
                profiles_per_task: ppt,
                tasks_per_respondent: tasks,
                order_policy: if shuffled {
                    OrderPolicy::ShuffledPerRespondent
                } else {
                    OrderPolicy::Fixed
                },
                prohibited_pairs: vec![],
                questionnaire: vec![Question {
                    id: "q1".into(),
                    key: "k".into(),
                    prompt: "How?".into(),
                    response: ResponseFormat::Options(vec!["x".into(), "y".into()]),
                }],
            },
        )
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(spec in arb_spec()) {
            let text = spec.to_toml();
            let back = parse_design(&text).unwrap();
            prop_assert_eq!(&back, &spec);
            prop_assert_eq!(back.to_toml(), text);
        }

        #[test]
        fn valid_designs_have_positive_probabilities(spec in arb_spec()) {
            prop_assert!(validate_design(&spec).is_empty());
            for a in &spec.attributes {
                for l in &a.levels {
                    prop_assert!(l.probability > 0.0);
                }
            }
        }
    }
}
