//! Discharge-to-bed-ready digital twin.
//!
//! * [`domain`]: feature schema, shifts, scenarios and empirical distributions
//! * [`des`]: discrete-event kernel with shift-staffed resource pools
//! * [`sim`]: the four-stage bed cleaning process model and replication runner
//! * [`gbm`]: gradient-boosted regression trees used as the surrogate model
//! * [`shap`]: Shapley attributions and global importance
//! * [`validation`]: MAE, sigma coverage, error distributions and reports

pub mod des;
pub mod domain;
pub mod gbm;
pub mod shap;
pub mod sim;
pub mod validation;

pub use domain::{
    DailyRecord, EmpiricalDist, FeatureVector, Scenario, Shift, ShiftCalendar, FEATURE_COUNT,
    FEATURE_NAMES,
};
pub use gbm::{GbmModel, TrainParams};
pub use sim::{run_scenario, ScenarioResult};
