//! Randomized profiles, choice tasks and per-respondent session plans.
//!
//! Every plan is a pure function of `(design, seed)`: the seed drives a
//! ChaCha8 stream and nothing else feeds the draws.

use indexmap::IndexMap;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::DesignSpec;

/// Rejection draws allowed before a profile is declared unsatisfiable.
pub const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum RandomizerError {
    #[error("gave up after {0} rejected profiles; prohibited pairs are too restrictive")]
    Exhausted(usize),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("malformed session plan: {0}")]
    Plan(String),
}

/// One candidate profile: a level index per attribute, in design order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Profile {
    pub levels: Vec<usize>,
}

impl Profile {
    /// Attribute name to level name, in design order.
    pub fn labeled(&self, spec: &DesignSpec) -> IndexMap<String, String> {
        spec.attributes
            .iter()
            .zip(&self.levels)
            .map(|(a, &l)| (a.name.clone(), a.levels[l].name.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoiceTask {
    /// 1-based.
    pub task_index: usize,
    pub profiles: Vec<Profile>,
    /// Attribute indices in display order.
    pub attribute_display_order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionPlan {
    pub session_id: String,
    pub seed: u64,
    pub tasks: Vec<ChoiceTask>,
}

/// Draws profiles from a design with per-attribute weighted sampling and
/// rejection of prohibited pairs.
pub struct ProfileSampler<'a> {
    spec: &'a DesignSpec,
    dists: Vec<WeightedIndex<f64>>,
    banned: Vec<((usize, usize), (usize, usize))>,
}

impl<'a> ProfileSampler<'a> {
    pub fn new(spec: &'a DesignSpec) -> Result<Self, RandomizerError> {
        let dists = spec
            .attributes
            .iter()
            .map(|a| {
                WeightedIndex::new(a.levels.iter().map(|l| l.probability)).map_err(|e| {
                    RandomizerError::InvalidDesign(format!("attribute {:?}: {e}", a.name))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            spec,
            dists,
            banned: spec.resolved_prohibitions(),
        })
    }

    pub fn spec(&self) -> &DesignSpec {
        self.spec
    }

    fn admissible(&self, levels: &[usize]) -> bool {
        self.banned
            .iter()
            .all(|&((a1, l1), (a2, l2))| !(levels[a1] == l1 && levels[a2] == l2))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Profile, RandomizerError> {
        let mut levels = vec![0; self.dists.len()];
        for _ in 0..MAX_REJECTIONS {
            for (slot, dist) in levels.iter_mut().zip(&self.dists) {
                *slot = dist.sample(rng);
            }
            if self.admissible(&levels) {
                return Ok(Profile { levels });
            }
        }
        Err(RandomizerError::Exhausted(MAX_REJECTIONS))
    }
}

/// Draws one profile, each attribute independently per its level
/// probabilities.
pub fn sample_profile<R: Rng + ?Sized>(
    spec: &DesignSpec,
    rng: &mut R,
) -> Result<Profile, RandomizerError> {
    ProfileSampler::new(spec)?.sample(rng)
}

/// Builds a respondent's full task plan from `seed`.
///
/// Profiles are independent draws within and across tasks, so their
/// left/right positions are already exchangeable.
pub fn generate_plan(
    spec: &DesignSpec,
    session_id: impl Into<String>,
    seed: u64,
) -> Result<SessionPlan, RandomizerError> {
    let sampler = ProfileSampler::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..spec.attributes.len()).collect();
    if spec.order_policy == crate::design::OrderPolicy::ShuffledPerRespondent {
        order.shuffle(&mut rng);
    }
    let tasks = (1..=spec.tasks_per_respondent)
        .map(|task_index| {
            let profiles = (0..spec.profiles_per_task)
                .map(|_| sampler.sample(&mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ChoiceTask {
                task_index,
                profiles,
                attribute_display_order: order.clone(),
            })
        })
        .collect::<Result<Vec<_>, RandomizerError>>()?;
    Ok(SessionPlan {
        session_id: session_id.into(),
        seed,
        tasks,
    })
}

/// `n` plans with ids `s0001`, `s0002`, ... Plan seeds are successive
/// draws from a ChaCha8 stream seeded by `seed`.
pub fn generate_plans(spec: &DesignSpec, n: usize, seed: u64) -> Result<Vec<SessionPlan>, RandomizerError> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (1..=n)
        .map(|i| generate_plan(spec, format!("s{i:04}"), master.next_u64()))
        .collect()
}

/// Empirical level frequencies over `n_draws` independent profiles.
pub fn level_frequencies(
    spec: &DesignSpec,
    n_draws: usize,
    seed: u64,
) -> Result<IndexMap<String, IndexMap<String, f64>>, RandomizerError> {
    if n_draws == 0 {
        return Err(RandomizerError::InvalidDesign("n_draws must be at least 1".into()));
    }
    let sampler = ProfileSampler::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: Vec<Vec<u64>> = spec.attributes.iter().map(|a| vec![0; a.levels.len()]).collect();
    for _ in 0..n_draws {
        let p = sampler.sample(&mut rng)?;
        for (c, &l) in counts.iter_mut().zip(&p.levels) {
            c[l] += 1;
        }
    }
    Ok(spec
        .attributes
        .iter()
        .zip(counts)
        .map(|(a, c)| {
            let freq = a
                .levels
                .iter()
                .zip(c)
                .map(|(l, n)| (l.name.clone(), n as f64 / n_draws as f64))
                .collect();
            (a.name.clone(), freq)
        })
        .collect())
}

// Audit-log serialization: plans are written with names, not indices.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanSetFile {
    sessions: Vec<PlanFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    session_id: String,
    // TOML integers are signed 64-bit; keep the full u64 range as text.
    seed: String,
    tasks: Vec<TaskFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    task_index: usize,
    attribute_display_order: Vec<String>,
    profiles: Vec<IndexMap<String, String>>,
}

impl SessionPlan {
    fn to_file(&self, spec: &DesignSpec) -> PlanFile {
        PlanFile {
            session_id: self.session_id.clone(),
            seed: self.seed.to_string(),
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskFile {
                    task_index: t.task_index,
                    attribute_display_order: t
                        .attribute_display_order
                        .iter()
                        .map(|&a| spec.attributes[a].name.clone())
                        .collect(),
                    profiles: t.profiles.iter().map(|p| p.labeled(spec)).collect(),
                })
                .collect(),
        }
    }

    fn from_file(spec: &DesignSpec, f: PlanFile) -> Result<Self, RandomizerError> {
        let bad = |m: String| RandomizerError::Plan(m);
        let seed = f
            .seed
            .parse()
            .map_err(|_| bad(format!("seed {:?} is not a u64", f.seed)))?;
        let mut tasks = Vec::with_capacity(f.tasks.len());
        for t in f.tasks {
            let order = t
                .attribute_display_order
                .iter()
                .map(|n| spec.attribute_index(n).ok_or_else(|| bad(format!("unknown attribute {n:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let profiles = t
                .profiles
                .iter()
                .map(|p| {
                    spec.attributes
                        .iter()
                        .map(|a| {
                            let name = p
                                .get(&a.name)
                                .ok_or_else(|| bad(format!("profile lacks attribute {:?}", a.name)))?;
                            a.level_index(name)
                                .ok_or_else(|| bad(format!("unknown level {name:?} of {:?}", a.name)))
                        })
                        .collect::<Result<Vec<_>, _>>()
                        .map(|levels| Profile { levels })
                })
                .collect::<Result<Vec<_>, _>>()?;
            tasks.push(ChoiceTask {
                task_index: t.task_index,
                profiles,
                attribute_display_order: order,
            });
        }
        Ok(SessionPlan {
            session_id: f.session_id,
            seed,
            tasks,
        })
    }
}

/// Writes plans in the design file format (TOML), one `[[sessions]]` each.
pub fn plans_to_toml(spec: &DesignSpec, plans: &[SessionPlan]) -> String {
    let file = PlanSetFile {
        sessions: plans.iter().map(|p| p.to_file(spec)).collect(),
    };
    toml::to_string_pretty(&file).expect("plans serialize")
}

pub fn parse_plans(spec: &DesignSpec, text: &str) -> Result<Vec<SessionPlan>, RandomizerError> {
    let file: PlanSetFile = toml::from_str(text).map_err(|e| RandomizerError::Plan(e.to_string()))?;
    file.sessions
        .into_iter()
        .map(|p| SessionPlan::from_file(spec, p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{parse_design, DesignSpec, LevelRef, OrderPolicy, ProhibitedPair};

    fn toy(levels: &[usize]) -> DesignSpec {
        let mut s = String::from("tasks_per_respondent = 4\n");
        for (i, &n) in levels.iter().enumerate() {
            let names: Vec<String> = (0..n).map(|j| format!("\"{}{}\"", (b'a' + i as u8) as char, j + 1)).collect();
            s.push_str(&format!("[[attributes]]\nname = \"{}\"\nlevels = [{}]\n", (b'A' + i as u8) as char, names.join(",")));
        }
        parse_design(&s).unwrap()
    }

    #[test]
    fn party_frequency_matches_weight() {
        let spec = DesignSpec::bundled();
        let freq = level_frequencies(&spec, 100_000, 7).unwrap();
        let na = freq["Party Affiliation"]["Party Identification not available"];
        assert!((na - 0.66).abs() < 0.01, "{na}");
    }

    #[test]
    fn uniform_two_levels() {
        let spec = toy(&[2]);
        let freq = level_frequencies(&spec, 100_000, 1).unwrap();
        for f in freq["A"].values() {
            assert!((f - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn uniform_four_levels() {
        let spec = toy(&[4]);
        let freq = level_frequencies(&spec, 100_000, 2).unwrap();
        for f in freq["A"].values() {
            assert!((f - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn bundled_frequencies_within_half_percent() {
        let spec = DesignSpec::bundled();
        let freq = level_frequencies(&spec, 200_000, 11).unwrap();
        let mut worst: f64 = 0.0;
        for attr in &spec.attributes {
            let f = &freq[&attr.name];
            let total: f64 = f.values().sum();
            assert!((total - 1.0).abs() < 1e-9);
            for l in &attr.levels {
                worst = worst.max((f[&l.name] - l.probability).abs());
            }
        }
        assert!(worst < 0.005, "{worst}");
    }

    #[test]
    fn single_draw_is_degenerate() {
        let spec = DesignSpec::bundled();
        let freq = level_frequencies(&spec, 1, 3).unwrap();
        for f in freq.values() {
            assert_eq!(f.values().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(f.values().filter(|&&v| v == 0.0).count(), f.len() - 1);
        }
        assert!(level_frequencies(&spec, 0, 3).is_err());
    }

    #[test]
    fn prohibited_pair_never_drawn() {
        let mut spec = toy(&[2, 2, 3]);
        spec.prohibited_pairs.push(ProhibitedPair {
            first: LevelRef::new("A", "a1"),
            second: LevelRef::new("B", "b1"),
        });
        let sampler = ProfileSampler::new(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut joint = [[0u32; 2]; 2];
        for _ in 0..50_000 {
            let p = sampler.sample(&mut rng).unwrap();
            joint[p.levels[0]][p.levels[1]] += 1;
        }
        assert_eq!(joint[0][0], 0);
        assert!(joint[0][1] > 0 && joint[1][0] > 0 && joint[1][1] > 0);
    }

    #[test]
    fn exhausted_rejections() {
        // Bypasses validation: every A level is banned with b1 and b2.
        let mut spec = toy(&[2, 2]);
        for a in ["a1", "a2"] {
            for b in ["b1", "b2"] {
                spec.prohibited_pairs.push(ProhibitedPair {
                    first: LevelRef::new("A", a),
                    second: LevelRef::new("B", b),
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_profile(&spec, &mut rng),
            Err(RandomizerError::Exhausted(MAX_REJECTIONS))
        );
        assert!(generate_plan(&spec, "s", 1).is_err());
    }

    #[test]
    fn plan_is_deterministic() {
        let spec = DesignSpec::bundled();
        let a = generate_plan(&spec, "s1", 42).unwrap();
        let b = generate_plan(&spec, "s1", 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_plan(&spec, "s1", 43).unwrap());
    }

    #[test]
    fn bundled_plan_shape() {
        let spec = DesignSpec::bundled();
        let plan = generate_plan(&spec, "s", 9).unwrap();
        assert_eq!(plan.tasks.len(), 10);
        let fixed: Vec<usize> = (0..9).collect();
        for (i, t) in plan.tasks.iter().enumerate() {
            assert_eq!(t.task_index, i + 1);
            assert_eq!(t.profiles.len(), 2);
            assert_eq!(t.attribute_display_order, fixed);
        }
    }

    #[test]
    fn shuffled_order_is_per_session() {
        let mut spec = DesignSpec::bundled();
        spec.order_policy = OrderPolicy::ShuffledPerRespondent;
        let mut distinct = std::collections::HashSet::new();
        for seed in 0..20 {
            let plan = generate_plan(&spec, "s", seed).unwrap();
            let first = &plan.tasks[0].attribute_display_order;
            let mut sorted = first.clone();
            sorted.sort();
            assert_eq!(sorted, (0..9).collect::<Vec<_>>());
            assert!(plan.tasks.iter().all(|t| &t.attribute_display_order == first));
            distinct.insert(first.clone());
        }
        assert!(distinct.len() > 1);
    }

    #[test]
    fn joint_frequencies_factorize() {
        // Independence: joint frequency of (A=i, B=j) within 3 standard
        // errors of the product of marginals.
        let spec = toy(&[3, 4]);
        let sampler = ProfileSampler::new(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 60_000;
        let mut joint = [[0f64; 4]; 3];
        for _ in 0..n {
            let p = sampler.sample(&mut rng).unwrap();
            joint[p.levels[0]][p.levels[1]] += 1.0;
        }
        let nf = n as f64;
        for i in 0..3 {
            for j in 0..4 {
                let pa: f64 = joint[i].iter().sum::<f64>() / nf;
                let pb: f64 = (0..3).map(|k| joint[k][j]).sum::<f64>() / nf;
                let expect = pa * pb;
                let se = (expect * (1.0 - expect) / nf).sqrt();
                assert!((joint[i][j] / nf - expect).abs() < 3.0 * se, "cell ({i},{j})");
            }
        }
    }

    #[test]
    fn plans_round_trip_through_toml() {
        let mut spec = DesignSpec::bundled();
        spec.order_policy = OrderPolicy::ShuffledPerRespondent;
        let plans = vec![
            generate_plan(&spec, "a", u64::MAX).unwrap(),
            generate_plan(&spec, "b", 0).unwrap(),
        ];
        let text = plans_to_toml(&spec, &plans);
        assert_eq!(parse_plans(&spec, &text).unwrap(), plans);
    }

    #[test]
    fn plan_batches_are_reproducible() {
        let spec = DesignSpec::bundled();
        let a = generate_plans(&spec, 3, 7).unwrap();
        assert_eq!(a, generate_plans(&spec, 3, 7).unwrap());
        assert_eq!(a.iter().map(|p| p.session_id.as_str()).collect::<Vec<_>>(), ["s0001", "s0002", "s0003"]);
        assert_ne!(a[0].seed, a[1].seed);
        assert_eq!(a[1], generate_plan(&spec, "s0002", a[1].seed).unwrap());
    }
}
