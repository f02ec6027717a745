//! Synthetic respondents with known effects, and an exact AMCE oracle for
//! toy designs.
//!
//! A simulated respondent gives each profile the utility
//! `Σ level contributions + Σ interaction contributions + Gumbel(σ)` and
//! picks the maximum, breaking exact ties uniformly. With two profiles the
//! Gumbel difference is logistic, so the choice probability has a closed
//! form and the oracle can enumerate every matchup exactly.

use std::sync::Arc;

use indexmap::IndexMap;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ChoiceDataset, DatasetError, Observation, Respondent};
use crate::design::{DesignSpec, LevelRef};
use crate::randomizer::{generate_plan, RandomizerError};

/// Largest profile space the oracle will enumerate.
pub const ORACLE_MAX_PROFILES: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum SimulatorError {
    #[error("invalid truth: {0}")]
    InvalidTruth(String),
    #[error("invalid covariate distribution: {0}")]
    InvalidCovariates(String),
    #[error("design has {0} distinct profiles; the oracle enumerates at most {ORACLE_MAX_PROFILES}, use Monte Carlo")]
    TooLarge(usize),
    #[error("oracle supports pairwise tasks only, design has {0} profiles per task")]
    Unsupported(usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Randomizer(#[from] RandomizerError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Utility contribution of a pair of levels shown together.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionEffect {
    pub first: (usize, usize),
    pub second: (usize, usize),
    pub utility: f64,
}

/// Effect replacements for respondents whose answer to `question` equals
/// `value`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupOverride {
    pub question: usize,
    pub value: String,
    pub effects: Vec<((usize, usize), f64)>,
}

/// Ground truth for simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueEffects {
    /// Utility per attribute per level; baselines are 0.
    pub utilities: Vec<Vec<f64>>,
    pub interactions: Vec<InteractionEffect>,
    pub noise_scale: f64,
    pub group_overrides: Vec<GroupOverride>,
}

impl TrueEffects {
    pub fn zero(spec: &DesignSpec) -> Self {
        Self {
            utilities: spec.attributes.iter().map(|a| vec![0.0; a.levels.len()]).collect(),
            interactions: Vec::new(),
            noise_scale: 1.0,
            group_overrides: Vec::new(),
        }
    }

    /// Sets a level's contribution by name. Panics on unknown names.
    pub fn with(mut self, spec: &DesignSpec, attribute: &str, level: &str, utility: f64) -> Self {
        let (a, l) = spec
            .resolve(&LevelRef::new(attribute, level))
            .unwrap_or_else(|| panic!("unknown level {attribute}={level}"));
        self.utilities[a][l] = utility;
        self
    }

    pub fn validate(&self, spec: &DesignSpec) -> Result<(), SimulatorError> {
        let bad = |m: String| Err(SimulatorError::InvalidTruth(m));
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return bad(format!("noise scale {} must be finite and >= 0", self.noise_scale));
        }
        if self.utilities.len() != spec.attributes.len() {
            return bad("one utility row per attribute required".into());
        }
        let check = |(a, l): (usize, usize), u: f64| -> Result<(), SimulatorError> {
            let attr = spec
                .attributes
                .get(a)
                .ok_or_else(|| SimulatorError::InvalidTruth(format!("attribute #{a}")))?;
            if l >= attr.levels.len() {
                return Err(SimulatorError::InvalidTruth(format!("{}: level #{l}", attr.name)));
            }
            if l == attr.baseline_index() && u != 0.0 {
                return Err(SimulatorError::InvalidTruth(format!(
                    "baseline {:?} of {:?} must have contribution 0",
                    attr.baseline, attr.name
                )));
            }
            if !u.is_finite() {
                return Err(SimulatorError::InvalidTruth(format!("{}: non-finite utility", attr.name)));
            }
            Ok(())
        };
        for (a, row) in self.utilities.iter().enumerate() {
            if row.len() != spec.attributes[a].levels.len() {
                return bad(format!("{}: wrong number of levels", spec.attributes[a].name));
            }
            for (l, &u) in row.iter().enumerate() {
                check((a, l), u)?;
            }
        }
        for i in &self.interactions {
            if i.first.0 == i.second.0 {
                return bad("interaction within one attribute".into());
            }
            for side in [i.first, i.second] {
                if side.0 >= spec.attributes.len() || side.1 >= spec.attributes[side.0].levels.len() {
                    return bad(format!("interaction references {side:?}"));
                }
            }
        }
        for g in &self.group_overrides {
            let q = spec
                .questionnaire
                .get(g.question)
                .ok_or_else(|| SimulatorError::InvalidTruth(format!("question #{}", g.question)))?;
            q.normalize_answer(&g.value).map_err(SimulatorError::InvalidTruth)?;
            for &(al, u) in &g.effects {
                check(al, u)?;
            }
        }
        Ok(())
    }

    /// The truth as seen by a respondent with these covariates.
    pub fn for_respondent(&self, covariates: &[Option<String>]) -> TrueEffects {
        let mut out = self.clone();
        out.group_overrides.clear();
        for g in &self.group_overrides {
            if covariates.get(g.question).and_then(|c| c.as_deref()) == Some(g.value.as_str()) {
                for &((a, l), u) in &g.effects {
                    out.utilities[a][l] = u;
                }
            }
        }
        out
    }

    /// Deterministic part of a profile's utility.
    pub fn utility(&self, levels: &[usize]) -> f64 {
        let mut u: f64 = levels
            .iter()
            .zip(&self.utilities)
            .map(|(&l, row)| row[l])
            .sum();
        for i in &self.interactions {
            if levels[i.first.0] == i.first.1 && levels[i.second.0] == i.second.1 {
                u += i.utility;
            }
        }
        u
    }
}

/// Marginal answer distribution per questionnaire item, aligned with the
/// design's questionnaire.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateDistribution {
    pub questions: Vec<Vec<(String, f64)>>,
}

impl CovariateDistribution {
    /// Every admissible answer equally likely.
    pub fn uniform(spec: &DesignSpec) -> Self {
        Self {
            questions: spec
                .questionnaire
                .iter()
                .map(|q| {
                    let values = q.answer_values();
                    let p = 1.0 / values.len() as f64;
                    values.into_iter().map(|v| (v, p)).collect()
                })
                .collect(),
        }
    }

    /// Respondent shares shipped with the bundled design.
    pub fn bundled(spec: &DesignSpec) -> Result<Self, SimulatorError> {
        Ok(parse_truth(spec, BUNDLED_TRUTH)?.1)
    }

    pub fn validate(&self, spec: &DesignSpec) -> Result<(), SimulatorError> {
        if self.questions.len() != spec.questionnaire.len() {
            return Err(SimulatorError::InvalidCovariates(
                "one distribution per question required".into(),
            ));
        }
        for (q, dist) in spec.questionnaire.iter().zip(&self.questions) {
            let mut sum = 0.0;
            for (v, p) in dist {
                q.normalize_answer(v).map_err(SimulatorError::InvalidCovariates)?;
                if p.is_nan() || *p < 0.0 {
                    return Err(SimulatorError::InvalidCovariates(format!("{}: negative probability", q.id)));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SimulatorError::InvalidCovariates(format!(
                    "{}: probabilities sum to {sum}",
                    q.id
                )));
            }
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Option<String>> {
        self.questions
            .iter()
            .map(|dist| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in dist {
                    acc += p;
                    if u < acc {
                        return Some(v.clone());
                    }
                }
                dist.iter().rev().find(|(_, p)| *p > 0.0).map(|(v, _)| v.clone())
            })
            .collect()
    }
}

/// Simulates `n_respondents` complete sessions. Respondent `r` draws from
/// its own ChaCha8 stream, so output depends only on the inputs and
/// `seed`.
pub fn simulate_dataset(
    spec: Arc<DesignSpec>,
    truth: &TrueEffects,
    covariates: &CovariateDistribution,
    n_respondents: usize,
    seed: u64,
) -> Result<ChoiceDataset, SimulatorError> {
    truth.validate(&spec)?;
    covariates.validate(&spec)?;
    let gumbel = (truth.noise_scale > 0.0)
        .then(|| Gumbel::new(0.0, truth.noise_scale).expect("positive scale"));
    let per_respondent: Vec<_> = (0..n_respondents)
        .into_par_iter()
        .map(|r| simulate_respondent(&spec, truth, covariates, gumbel.as_ref(), seed, r))
        .collect::<Result<Vec<_>, SimulatorError>>()?;

    let n_attr = spec.attributes.len();
    let per_row = spec.tasks_per_respondent * spec.profiles_per_task;
    let mut respondents = Vec::with_capacity(n_respondents);
    let mut rows = Vec::with_capacity(n_respondents * per_row);
    let mut levels = Vec::with_capacity(n_respondents * per_row * n_attr);
    for (r, (resp, obs, lv)) in per_respondent.into_iter().enumerate() {
        respondents.push(resp);
        rows.extend(obs.into_iter().map(|o| Observation { respondent: r, ..o }));
        levels.extend(lv);
    }
    Ok(ChoiceDataset::from_parts(spec, respondents, rows, levels)?)
}

type RespondentRows = (Respondent, Vec<Observation>, Vec<u16>);

fn simulate_respondent(
    spec: &DesignSpec,
    truth: &TrueEffects,
    covariates: &CovariateDistribution,
    gumbel: Option<&Gumbel<f64>>,
    seed: u64,
    r: usize,
) -> Result<RespondentRows, SimulatorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    let covs = covariates.draw(&mut rng);
    let own = truth.for_respondent(&covs);
    let id = format!("r{}", r + 1);
    let plan = generate_plan(spec, id.clone(), rng.next_u64())?;
    let mut rows = Vec::with_capacity(plan.tasks.len() * spec.profiles_per_task);
    let mut levels = Vec::new();
    let mut utils = Vec::with_capacity(spec.profiles_per_task);
    for task in &plan.tasks {
        utils.clear();
        for p in &task.profiles {
            let noise = gumbel.map_or(0.0, |g| g.sample(&mut rng));
            utils.push(own.utility(&p.levels) + noise);
        }
        let best = utils.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..utils.len()).filter(|&i| utils[i] == best).collect();
        let winner = if tied.len() == 1 {
            tied[0]
        } else {
            tied[rng.random_range(0..tied.len())]
        };
        for (i, p) in task.profiles.iter().enumerate() {
            rows.push(Observation {
                respondent: 0,
                task_index: task.task_index,
                profile_index: i + 1,
                chosen: i == winner,
            });
            levels.extend(p.levels.iter().map(|&l| l as u16));
        }
    }
    Ok((Respondent { id, covariates: covs }, rows, levels))
}

/// Every admissible profile with its display probability (renormalized
/// over profiles free of prohibited pairs).
fn enumerate_profiles(spec: &DesignSpec) -> Result<Vec<(Vec<usize>, f64)>, SimulatorError> {
    let total: usize = spec
        .attributes
        .iter()
        .map(|a| a.levels.len())
        .try_fold(1usize, |acc, n| acc.checked_mul(n))
        .unwrap_or(usize::MAX);
    if total > ORACLE_MAX_PROFILES {
        return Err(SimulatorError::TooLarge(total));
    }
    let banned = spec.resolved_prohibitions();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; spec.attributes.len()];
    loop {
        let ok = banned
            .iter()
            .all(|&((a1, l1), (a2, l2))| !(idx[a1] == l1 && idx[a2] == l2));
        if ok {
            let p: f64 = idx
                .iter()
                .zip(&spec.attributes)
                .map(|(&l, a)| a.levels[l].probability)
                .product();
            out.push((idx.clone(), p));
        }
        // Odometer increment, last attribute fastest.
        let mut k = idx.len();
        loop {
            if k == 0 {
                let mass: f64 = out.iter().map(|(_, p)| p).sum();
                for (_, p) in out.iter_mut() {
                    *p /= mass;
                }
                return Ok(out);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < spec.attributes[k].levels.len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

fn win_probability(diff: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            0.0
        } else {
            0.5
        }
    } else {
        1.0 / (1.0 + (-diff / sigma).exp())
    }
}

/// Profiles with their probability and expected choice rate against a
/// random opponent.
fn profile_win_rates(spec: &DesignSpec, truth: &TrueEffects) -> Result<Vec<(Vec<usize>, f64, f64)>, SimulatorError> {
    if spec.profiles_per_task != 2 {
        return Err(SimulatorError::Unsupported(spec.profiles_per_task));
    }
    truth.validate(spec)?;
    let profiles = enumerate_profiles(spec)?;
    let utils: Vec<f64> = profiles.iter().map(|(x, _)| truth.utility(x)).collect();
    Ok(profiles
        .iter()
        .zip(&utils)
        .map(|((x, px), &ux)| {
            let w: f64 = profiles
                .iter()
                .zip(&utils)
                .map(|((_, py), &uy)| py * win_probability(ux - uy, truth.noise_scale))
                .sum();
            (x.clone(), *px, w)
        })
        .collect())
}

/// Exact AMCE of every non-baseline level, keyed by `(attribute, level)`.
///
/// `E[Y | level] - E[Y | baseline]`, averaging over the other attributes
/// of the profile and over the opponent profile, all weighted by display
/// probabilities.
pub fn oracle_amce(spec: &DesignSpec, truth: &TrueEffects) -> Result<IndexMap<(String, String), f64>, SimulatorError> {
    let rates = profile_win_rates(spec, truth)?;
    let mut out = IndexMap::new();
    for (a, attr) in spec.attributes.iter().enumerate() {
        let mean_at = |l: usize| {
            let (num, den) = rates
                .iter()
                .filter(|(x, _, _)| x[a] == l)
                .fold((0.0, 0.0), |(n, d), (_, p, w)| (n + p * w, d + p));
            num / den
        };
        let base = mean_at(attr.baseline_index());
        for (l, level) in attr.non_baseline_levels() {
            out.insert((attr.name.clone(), level.name.clone()), mean_at(l) - base);
        }
    }
    Ok(out)
}

/// Exact interaction effects for an attribute pair: the change in the
/// first attribute's AMCE when the second moves from its baseline to each
/// other level. Keyed by `(first level, second level)`.
pub fn oracle_acie(
    spec: &DesignSpec,
    truth: &TrueEffects,
    first: &str,
    second: &str,
) -> Result<IndexMap<(String, String), f64>, SimulatorError> {
    let a = spec
        .attribute_index(first)
        .ok_or_else(|| SimulatorError::InvalidTruth(format!("unknown attribute {first:?}")))?;
    let b = spec
        .attribute_index(second)
        .ok_or_else(|| SimulatorError::InvalidTruth(format!("unknown attribute {second:?}")))?;
    let rates = profile_win_rates(spec, truth)?;
    let cell = |la: usize, lb: usize| {
        let (num, den) = rates
            .iter()
            .filter(|(x, _, _)| x[a] == la && x[b] == lb)
            .fold((0.0, 0.0), |(n, d), (_, p, w)| (n + p * w, d + p));
        num / den
    };
    let (attr_a, attr_b) = (&spec.attributes[a], &spec.attributes[b]);
    let (a0, b0) = (attr_a.baseline_index(), attr_b.baseline_index());
    let mut out = IndexMap::new();
    for (la, lva) in attr_a.non_baseline_levels() {
        for (lb, lvb) in attr_b.non_baseline_levels() {
            let v = (cell(la, lb) - cell(a0, lb)) - (cell(la, b0) - cell(a0, b0));
            out.insert((lva.name.clone(), lvb.name.clone()), v);
        }
    }
    Ok(out)
}

// Truth file (TOML).

pub const BUNDLED_TRUTH: &str = include_str!("../../../designs/villa-turek-2022.truth");

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFile {
    #[serde(default = "default_noise")]
    noise_scale: f64,
    #[serde(default)]
    effects: Vec<EffectFile>,
    #[serde(default)]
    interactions: Vec<InteractionFile>,
    #[serde(default)]
    group_overrides: Vec<GroupFile>,
    #[serde(default)]
    covariates: IndexMap<String, Vec<ShareFile>>,
}

fn default_noise() -> f64 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EffectFile {
    attribute: String,
    level: String,
    utility: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InteractionFile {
    first: LevelRef,
    second: LevelRef,
    utility: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupFile {
    covariate: String,
    value: String,
    effects: Vec<EffectFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShareFile {
    value: String,
    probability: f64,
}

/// Parses a truth file: effects, interactions, group overrides, noise
/// scale and an optional `[covariates]` table of answer shares. Questions
/// without listed shares are uniform.
pub fn parse_truth(spec: &DesignSpec, text: &str) -> Result<(TrueEffects, CovariateDistribution), SimulatorError> {
    let file: TruthFile = toml::from_str(text).map_err(|e| SimulatorError::Parse(e.to_string()))?;
    let resolve = |attribute: &str, level: &str| {
        spec.resolve(&LevelRef::new(attribute, level))
            .ok_or_else(|| SimulatorError::InvalidTruth(format!("unknown level {attribute}={level}")))
    };
    let mut truth = TrueEffects::zero(spec);
    truth.noise_scale = file.noise_scale;
    for e in &file.effects {
        let (a, l) = resolve(&e.attribute, &e.level)?;
        truth.utilities[a][l] = e.utility;
    }
    for i in &file.interactions {
        truth.interactions.push(InteractionEffect {
            first: resolve(&i.first.attribute, &i.first.level)?,
            second: resolve(&i.second.attribute, &i.second.level)?,
            utility: i.utility,
        });
    }
    let question_of = |name: &str| {
        let key = name.strip_prefix(crate::dataset::COVARIATE_PREFIX).unwrap_or(name);
        spec.questionnaire
            .iter()
            .position(|q| q.key == key || q.id == name)
            .ok_or_else(|| SimulatorError::InvalidTruth(format!("unknown covariate {name:?}")))
    };
    for g in &file.group_overrides {
        let effects = g
            .effects
            .iter()
            .map(|e| Ok((resolve(&e.attribute, &e.level)?, e.utility)))
            .collect::<Result<Vec<_>, SimulatorError>>()?;
        truth.group_overrides.push(GroupOverride {
            question: question_of(&g.covariate)?,
            value: g.value.clone(),
            effects,
        });
    }
    truth.validate(spec)?;

    let mut covs = CovariateDistribution::uniform(spec);
    for (name, shares) in &file.covariates {
        let q = question_of(name)?;
        covs.questions[q] = shares.iter().map(|s| (s.value.clone(), s.probability)).collect();
    }
    covs.validate(spec)?;
    Ok((truth, covs))
}
