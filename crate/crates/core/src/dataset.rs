//! Long-format choice data: one row per profile shown, plus one covariate
//! record per respondent.
//!
//! CSV layout: `respondent_id, task_index, profile_index, chosen`, then one
//! column per attribute in design order holding the level name, then one
//! `resp_<key>` column per questionnaire item. Missing covariates are empty
//! fields.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use indexmap::IndexMap;
use thiserror::Error;

use crate::design::{DesignSpec, ResponseFormat};
use crate::randomizer::SessionPlan;

pub const COVARIATE_PREFIX: &str = "resp_";

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("csv: {0}")]
    Csv(String),
    #[error("header mismatch: expected [{expected}], found [{found}]")]
    Header { expected: String, found: String },
    #[error("line {line}, column {column:?}: unknown level {value:?}")]
    UnknownLevel {
        line: usize,
        column: String,
        value: String,
    },
    #[error("line {line}, column {column:?}: {message}")]
    InvalidValue {
        line: usize,
        column: String,
        message: String,
    },
    #[error("respondent {respondent:?}, task {task}: forced choice violated ({detail})")]
    ForcedChoice {
        respondent: String,
        task: usize,
        detail: String,
    },
    #[error("covariates for respondent {0:?} have no observations")]
    OrphanCovariates(String),
    #[error("respondent {respondent:?}: rows disagree on {column:?}")]
    InconsistentCovariates { respondent: String, column: String },
    #[error("no choice recorded for task {0}")]
    MissingChoice(usize),
    #[error("task {task}: choice {choice} outside 1..={max}")]
    ChoiceOutOfRange { task: usize, choice: usize, max: usize },
    #[error("session {0:?} is already in the dataset")]
    DuplicateSession(String),
    #[error("question {question:?}: {message}")]
    Answer { question: String, message: String },
    #[error("unknown covariate {0:?}")]
    UnknownCovariate(String),
    #[error("session plan does not fit the design: {0}")]
    PlanMismatch(String),
    #[error("datasets use different designs")]
    DesignMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    /// Index into [`ChoiceDataset::respondents`].
    pub respondent: usize,
    pub task_index: usize,
    /// 1-based position within the task.
    pub profile_index: usize,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Respondent {
    pub id: String,
    /// One entry per questionnaire item, in questionnaire order.
    pub covariates: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDataset {
    design: Arc<DesignSpec>,
    respondents: Vec<Respondent>,
    rows: Vec<Observation>,
    // Row-major, one level index per attribute.
    levels: Vec<u16>,
}

impl ChoiceDataset {
    pub fn empty(design: Arc<DesignSpec>) -> Self {
        Self {
            design,
            respondents: Vec::new(),
            rows: Vec::new(),
            levels: Vec::new(),
        }
    }

    /// Assembles and validates a dataset. `levels` is row-major with one
    /// level index per attribute.
    pub fn from_parts(
        design: Arc<DesignSpec>,
        respondents: Vec<Respondent>,
        rows: Vec<Observation>,
        levels: Vec<u16>,
    ) -> Result<Self, DatasetError> {
        let ds = Self {
            design,
            respondents,
            rows,
            levels,
        };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<(), DatasetError> {
        let n_attr = self.design.attributes.len();
        if self.levels.len() != self.rows.len() * n_attr {
            return Err(DatasetError::PlanMismatch("level matrix has the wrong size".into()));
        }
        for (i, chunk) in self.levels.chunks(n_attr.max(1)).enumerate() {
            for (a, &l) in chunk.iter().enumerate() {
                if l as usize >= self.design.attributes[a].levels.len() {
                    return Err(DatasetError::UnknownLevel {
                        line: i + 2,
                        column: self.design.attributes[a].name.clone(),
                        value: l.to_string(),
                    });
                }
            }
        }
        let mut has_rows = vec![false; self.respondents.len()];
        let j = self.design.profiles_per_task;
        // (count, chosen count, bitmask of profile positions)
        let mut groups: HashMap<(usize, usize), (usize, usize, u64)> = HashMap::new();
        for r in &self.rows {
            if r.respondent >= self.respondents.len() {
                return Err(DatasetError::PlanMismatch(format!(
                    "row references respondent #{}",
                    r.respondent
                )));
            }
            has_rows[r.respondent] = true;
            let g = groups.entry((r.respondent, r.task_index)).or_default();
            g.0 += 1;
            g.1 += r.chosen as usize;
            if (1..=j.min(64)).contains(&r.profile_index) {
                g.2 |= 1 << (r.profile_index - 1);
            }
        }
        let full = if j >= 64 { u64::MAX } else { (1u64 << j) - 1 };
        let mut keys: Vec<_> = groups.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let (count, chosen, mask) = groups[&key];
            let fail = |detail: String| DatasetError::ForcedChoice {
                respondent: self.respondents[key.0].id.clone(),
                task: key.1,
                detail,
            };
            if count != j || mask != full {
                return Err(fail(format!("expected profiles 1..={j}, found {count} row(s)")));
            }
            if chosen != 1 {
                return Err(fail(format!("chosen flags sum to {chosen}")));
            }
        }
        if let Some(i) = has_rows.iter().position(|h| !h) {
            return Err(DatasetError::OrphanCovariates(self.respondents[i].id.clone()));
        }
        let mut ids = HashSet::new();
        for r in &self.respondents {
            if !ids.insert(r.id.as_str()) {
                return Err(DatasetError::DuplicateSession(r.id.clone()));
            }
        }
        Ok(())
    }

    pub fn design(&self) -> &Arc<DesignSpec> {
        &self.design
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn respondents(&self) -> &[Respondent] {
        &self.respondents
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_respondents(&self) -> usize {
        self.respondents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Level indices shown in row `i`, in attribute order.
    pub fn row_levels(&self, i: usize) -> &[u16] {
        let n = self.design.attributes.len();
        &self.levels[i * n..(i + 1) * n]
    }

    pub fn csv_header(design: &DesignSpec) -> Vec<String> {
        let mut h: Vec<String> = ["respondent_id", "task_index", "profile_index", "chosen"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(design.attributes.iter().map(|a| a.name.clone()));
        h.extend(
            design
                .questionnaire
                .iter()
                .map(|q| format!("{COVARIATE_PREFIX}{}", q.key)),
        );
        h
    }

    /// Reads the documented CSV layout and validates every invariant.
    pub fn ingest_csv(text: &str, design: Arc<DesignSpec>) -> Result<Self, DatasetError> {
        let expected = Self::csv_header(&design);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let found: Vec<String> = reader
            .headers()
            .map_err(|e| DatasetError::Csv(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if found != expected {
            return Err(DatasetError::Header {
                expected: expected.join(", "),
                found: found.join(", "),
            });
        }
        let n_attr = design.attributes.len();
        let n_cov = design.questionnaire.len();
        let mut respondents: Vec<Respondent> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut rows = Vec::new();
        let mut levels = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| DatasetError::Csv(format!("line {line}: {e}")))?;
            let int = |col: usize| -> Result<usize, DatasetError> {
                record[col].trim().parse().map_err(|_| DatasetError::InvalidValue {
                    line,
                    column: expected[col].clone(),
                    message: format!("{:?} is not a non-negative integer", &record[col]),
                })
            };
            let id = record[0].to_string();
            let task_index = int(1)?;
            let profile_index = int(2)?;
            let chosen = match record[3].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(DatasetError::InvalidValue {
                        line,
                        column: "chosen".into(),
                        message: format!("{other:?} is not 0 or 1"),
                    })
                }
            };
            for (a, attr) in design.attributes.iter().enumerate() {
                let value = &record[4 + a];
                let l = attr.level_index(value).ok_or_else(|| DatasetError::UnknownLevel {
                    line,
                    column: attr.name.clone(),
                    value: value.to_string(),
                })?;
                levels.push(l as u16);
            }
            let mut covs = Vec::with_capacity(n_cov);
            for (q, question) in design.questionnaire.iter().enumerate() {
                let raw = &record[4 + n_attr + q];
                if raw.is_empty() {
                    covs.push(None);
                } else {
                    let v = question
                        .normalize_answer(raw)
                        .map_err(|message| DatasetError::InvalidValue {
                            line,
                            column: expected[4 + n_attr + q].clone(),
                            message,
                        })?;
                    covs.push(Some(v));
                }
            }
            let r = match index.get(&id) {
                Some(&r) => {
                    if let Some(q) = (0..n_cov).find(|&q| respondents[r].covariates[q] != covs[q]) {
                        return Err(DatasetError::InconsistentCovariates {
                            respondent: id,
                            column: expected[4 + n_attr + q].clone(),
                        });
                    }
                    r
                }
                None => {
                    respondents.push(Respondent {
                        id: id.clone(),
                        covariates: covs,
                    });
                    index.insert(id, respondents.len() - 1);
                    respondents.len() - 1
                }
            };
            rows.push(Observation {
                respondent: r,
                task_index,
                profile_index,
                chosen,
            });
        }
        Self::from_parts(design, respondents, rows, levels)
    }

    pub fn export_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::csv_header(&self.design)).expect("in-memory write");
        let mut record: Vec<String> = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            record.clear();
            let resp = &self.respondents[row.respondent];
            record.push(resp.id.clone());
            record.push(row.task_index.to_string());
            record.push(row.profile_index.to_string());
            record.push(if row.chosen { "1" } else { "0" }.to_string());
            for (attr, &l) in self.design.attributes.iter().zip(self.row_levels(i)) {
                record.push(attr.levels[l as usize].name.clone());
            }
            for c in &resp.covariates {
                record.push(c.clone().unwrap_or_default());
            }
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Adds a completed session: one row per profile per task, with the
    /// chosen profile (1-based per task) flagged.
    ///
    /// `answers` are keyed by question key or id.
    pub fn append_session(
        &self,
        plan: &SessionPlan,
        choices: &[usize],
        answers: &IndexMap<String, String>,
    ) -> Result<Self, DatasetError> {
        let design = &self.design;
        if self.respondents.iter().any(|r| r.id == plan.session_id) {
            return Err(DatasetError::DuplicateSession(plan.session_id.clone()));
        }
        if plan.tasks.len() != design.tasks_per_respondent {
            return Err(DatasetError::PlanMismatch(format!(
                "{} tasks, design wants {}",
                plan.tasks.len(),
                design.tasks_per_respondent
            )));
        }
        if choices.len() < plan.tasks.len() {
            return Err(DatasetError::MissingChoice(plan.tasks[choices.len()].task_index));
        }
        let covariates = design
            .questionnaire
            .iter()
            .map(|q| {
                let raw = answers
                    .get(&q.key)
                    .or_else(|| answers.get(&q.id))
                    .ok_or_else(|| DatasetError::Answer {
                        question: q.id.clone(),
                        message: "missing answer".into(),
                    })?;
                q.normalize_answer(raw)
                    .map(Some)
                    .map_err(|message| DatasetError::Answer {
                        question: q.id.clone(),
                        message,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut out = self.clone();
        let r = out.respondents.len();
        for (task, &choice) in plan.tasks.iter().zip(choices) {
            if task.profiles.len() != design.profiles_per_task {
                return Err(DatasetError::PlanMismatch(format!(
                    "task {} has {} profiles",
                    task.task_index,
                    task.profiles.len()
                )));
            }
            if choice < 1 || choice > task.profiles.len() {
                return Err(DatasetError::ChoiceOutOfRange {
                    task: task.task_index,
                    choice,
                    max: task.profiles.len(),
                });
            }
            for (p, profile) in task.profiles.iter().enumerate() {
                if profile.levels.len() != design.attributes.len() {
                    return Err(DatasetError::PlanMismatch("profile width".into()));
                }
                out.rows.push(Observation {
                    respondent: r,
                    task_index: task.task_index,
                    profile_index: p + 1,
                    chosen: p + 1 == choice,
                });
                out.levels.extend(profile.levels.iter().map(|&l| l as u16));
            }
        }
        out.respondents.push(Respondent {
            id: plan.session_id.clone(),
            covariates,
        });
        Ok(out)
    }

    /// Position of a covariate in the questionnaire; accepts `resp_<key>`,
    /// `<key>` or the question id.
    pub fn covariate_position(&self, name: &str) -> Result<usize, DatasetError> {
        let key = name.strip_prefix(COVARIATE_PREFIX).unwrap_or(name);
        self.design
            .questionnaire
            .iter()
            .position(|q| q.key == key || q.id == name)
            .ok_or_else(|| DatasetError::UnknownCovariate(name.to_string()))
    }

    /// Keeps respondents whose covariate equals `value`, preserving row order.
    pub fn subset(&self, covariate: &str, value: &str) -> Result<Self, DatasetError> {
        let q = self.covariate_position(covariate)?;
        self.filter_respondents(|r| r.covariates[q].as_deref() == Some(value))
    }

    /// Keeps the respondents matching `keep`, preserving row order.
    pub fn filter_respondents(&self, keep: impl Fn(&Respondent) -> bool) -> Result<Self, DatasetError> {
        let mut remap = vec![usize::MAX; self.respondents.len()];
        let mut respondents = Vec::new();
        for (i, r) in self.respondents.iter().enumerate() {
            if keep(r) {
                remap[i] = respondents.len();
                respondents.push(r.clone());
            }
        }
        let n_attr = self.design.attributes.len();
        let mut rows = Vec::new();
        let mut levels = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            let r = remap[row.respondent];
            if r != usize::MAX {
                rows.push(Observation { respondent: r, ..*row });
                levels.extend_from_slice(&self.levels[i * n_attr..(i + 1) * n_attr]);
            }
        }
        Ok(Self {
            design: self.design.clone(),
            respondents,
            rows,
            levels,
        })
    }

    /// Distinct observed values of a covariate, in questionnaire order.
    /// Respondents who did not answer are not represented.
    pub fn covariate_values(&self, covariate: &str) -> Result<Vec<String>, DatasetError> {
        let q = self.covariate_position(covariate)?;
        let seen: HashSet<&str> = self
            .respondents
            .iter()
            .filter_map(|r| r.covariates[q].as_deref())
            .collect();
        let question = &self.design.questionnaire[q];
        let mut ordered: Vec<String> = question
            .answer_values()
            .into_iter()
            .filter(|v| seen.contains(v.as_str()))
            .collect();
        if let ResponseFormat::Options(_) = question.response {
            // Values ingested from data are always listed options.
            debug_assert_eq!(ordered.len(), seen.len());
        }
        ordered.dedup();
        Ok(ordered)
    }

    /// Appends another dataset over the same design. Respondent ids must
    /// not overlap.
    pub fn concat(&self, other: &Self) -> Result<Self, DatasetError> {
        if *self.design != *other.design {
            return Err(DatasetError::DesignMismatch);
        }
        let offset = self.respondents.len();
        let mut out = self.clone();
        out.respondents.extend(other.respondents.iter().cloned());
        out.rows.extend(other.rows.iter().map(|r| Observation {
            respondent: r.respondent + offset,
            ..*r
        }));
        out.levels.extend_from_slice(&other.levels);
        out.check()?;
        Ok(out)
    }
}
