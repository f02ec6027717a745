//! Conjoint experiments: design files, profile randomization,
//! choice data, AMCE estimation, simulation and reporting.

pub mod dataset;
pub mod design;
pub mod estimator;
pub mod randomizer;
pub mod report;
pub mod simulator;

pub use dataset::{ChoiceDataset, DatasetError, Observation, Respondent};
pub use design::{parse_design, validate_design, DesignError, DesignSpec, LevelRef};
pub use estimator::{
    estimate_acie, estimate_amce, estimate_conditional, EstimateRow, EstimateTable, EstimatorError,
    VarianceMethod,
};
pub use randomizer::{generate_plan, ChoiceTask, Profile, RandomizerError, SessionPlan};
pub use simulator::{simulate_dataset, CovariateDistribution, SimulatorError, TrueEffects};
