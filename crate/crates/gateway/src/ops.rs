//! Operations shared by the command line and the HTTP service. Each returns
//! the exact JSON payload both front ends emit.

use bedtwin_core::domain::{DailyRecord, FeatureVector, Scenario};
use bedtwin_core::gbm::{self, fit_features, train_surrogate_on_synthetic, GbmModel, TrainParams};
use bedtwin_core::shap::{
    global_importance, sample_background, shap_exact, shap_sampled, AttributionReport,
    ImportanceReport,
};
use bedtwin_core::sim::{latin_hypercube, run_scenario, sweep, SweepRanges, SweepRow};
use bedtwin_core::validation::{validation_report, ValidationReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ScenarioDefaults;

#[derive(Debug, Error)]
pub enum OpError {
    /// Inputs rejected before any work ran.
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
}

pub type Result<T, E = OpError> = std::result::Result<T, E>;

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("payload types serialize infallibly")
}

/// Runs a scenario and returns the `ScenarioResult` JSON.
pub fn simulate(scenario: &Scenario) -> Result<String> {
    scenario
        .validate()
        .map_err(|e| OpError::Invalid(e.to_string()))?;
    let result = run_scenario(scenario).map_err(|e| OpError::Failed(e.to_string()))?;
    Ok(to_json(&result))
}

/// Latin-hypercube sweep design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepDesign {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ranges: SweepRanges,
    /// Settings copied into every design point; features are overwritten.
    #[serde(default)]
    pub base: Option<Scenario>,
    #[serde(default)]
    pub replications: Option<u32>,
}

/// A sweep grid file: explicit scenarios or a design to expand.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SweepGrid {
    Scenarios(Vec<Scenario>),
    Design(Box<SweepDesign>),
}

impl SweepGrid {
    pub fn expand(&self, defaults: &ScenarioDefaults) -> Result<Vec<Scenario>> {
        match self {
            SweepGrid::Scenarios(list) => Ok(list.clone()),
            SweepGrid::Design(d) => {
                if d.n == 0 {
                    return Err(OpError::Invalid("sweep design needs n >= 1".into()));
                }
                let mut base = d
                    .base
                    .clone()
                    .unwrap_or_else(|| defaults.scenario(FeatureVector::default()));
                if let Some(r) = d.replications {
                    base.replications = r;
                }
                Ok(latin_hypercube(&base, d.n, &d.ranges, d.seed))
            }
        }
    }
}

pub fn run_sweep(grid: &[Scenario]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(OpError::Invalid("sweep grid is empty".into()));
    }
    for (i, s) in grid.iter().enumerate() {
        s.validate()
            .map_err(|e| OpError::Invalid(format!("grid entry {i}: {e}")))?;
    }
    sweep(grid).map_err(|e| OpError::Failed(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub source: String,
    pub n_rows: usize,
    pub n_train: usize,
    pub n_holdout: usize,
    pub training_mae: f64,
    pub holdout_mae: Option<f64>,
    pub baseline_mae: Option<f64>,
    pub params: TrainParams,
}

fn mae_of(model: &GbmModel, x: &[FeatureVector], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(f, t)| (model.predict_row(&f.to_array()) - t).abs())
        .sum::<f64>()
        / y.len().max(1) as f64
}

/// Fits on every labelled row.
pub fn train_on_rows(
    x: &[FeatureVector],
    y: &[f64],
    params: &TrainParams,
    source: &str,
) -> Result<(GbmModel, TrainReport)> {
    if x.is_empty() {
        return Err(OpError::Invalid("no rows with a target to train on".into()));
    }
    let model = fit_features(x, y, params).map_err(|e| OpError::Invalid(e.to_string()))?;
    let report = TrainReport {
        source: source.into(),
        n_rows: x.len(),
        n_train: x.len(),
        n_holdout: 0,
        training_mae: mae_of(&model, x, y),
        holdout_mae: None,
        baseline_mae: None,
        params: *params,
    };
    Ok((model, report))
}

/// Fits on simulated sweep output with a held-out split.
pub fn train_on_sweep(rows: &[SweepRow], params: &TrainParams) -> Result<(GbmModel, TrainReport)> {
    let fit =
        train_surrogate_on_synthetic(rows, params).map_err(|e| OpError::Invalid(e.to_string()))?;
    let x: Vec<FeatureVector> = rows.iter().map(|r| r.features).collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| r.result.mean_btt.unwrap_or(f64::NAN))
        .collect();
    let report = TrainReport {
        source: "sweep".into(),
        n_rows: rows.len(),
        n_train: fit.n_train,
        n_holdout: fit.n_holdout,
        training_mae: mae_of(&fit.model, &x, &y),
        holdout_mae: Some(fit.holdout_mae),
        baseline_mae: Some(fit.baseline_mae),
        params: *params,
    };
    Ok((fit.model, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapMethod {
    Exact,
    Sampled { n_permutations: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub method: ShapMethod,
    pub background_size: usize,
    pub importance: ImportanceReport,
    pub attributions: Vec<AttributionReport>,
}

pub fn sensitivity(
    model: &GbmModel,
    rows: &[FeatureVector],
    method: ShapMethod,
    background_size: usize,
    seed: u64,
) -> Result<SensitivityResult> {
    if rows.is_empty() {
        return Err(OpError::Invalid("no rows to explain".into()));
    }
    if let ShapMethod::Sampled { n_permutations: 0 } = method {
        return Err(OpError::Invalid("n_permutations must be at least 1".into()));
    }
    let vectors: Vec<Vec<f64>> = rows.iter().map(|f| f.to_array().to_vec()).collect();
    let background = sample_background(&vectors, background_size.max(1), seed);
    let attributions = vectors
        .par_iter()
        .map(|x| match method {
            ShapMethod::Exact => shap_exact(model, x, &background),
            ShapMethod::Sampled { n_permutations } => {
                shap_sampled(model, x, &background, n_permutations, seed)
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| OpError::Failed(e.to_string()))?;
    let importance =
        global_importance(&attributions).map_err(|e| OpError::Failed(e.to_string()))?;
    Ok(SensitivityResult {
        method,
        background_size: background.len(),
        importance: ImportanceReport::from(&importance),
        attributions: attributions.iter().map(AttributionReport::from).collect(),
    })
}

/// Simulated (mean, sd) BTT for one day's inputs under the given defaults.
pub fn sim_runner(
    defaults: &ScenarioDefaults,
) -> impl Fn(&FeatureVector) -> std::result::Result<(f64, f64), String> + Sync + '_ {
    move |f: &FeatureVector| {
        let r = run_scenario(&defaults.scenario(*f)).map_err(|e| e.to_string())?;
        let mean = r.mean_btt.ok_or("no bed completed within the horizon")?;
        Ok((mean, r.sd_btt))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutput {
    #[serde(flatten)]
    pub report: ValidationReport,
    pub table: String,
}

pub fn validate(
    records: &[DailyRecord],
    model: &GbmModel,
    simulate: Option<&ScenarioDefaults>,
    outlier_threshold: f64,
) -> Result<ValidationOutput> {
    let labelled: Vec<DailyRecord> = records
        .iter()
        .filter(|r| r.actual_btt.is_some())
        .cloned()
        .collect();
    if labelled.is_empty() {
        return Err(OpError::Invalid("no records with actual_btt".into()));
    }
    let report = match simulate {
        Some(defaults) => {
            let runner = sim_runner(defaults);
            validation_report(&labelled, model, Some(&runner), outlier_threshold)
        }
        None => validation_report(&labelled, model, None, outlier_threshold),
    }
    .map_err(|e| OpError::Failed(e.to_string()))?;
    Ok(ValidationOutput {
        table: bedtwin_core::validation::render_table(&report.rows),
        report,
    })
}

pub fn load_model(bytes: &[u8]) -> Result<GbmModel> {
    gbm::load(bytes).map_err(|e| OpError::Invalid(format!("model file: {e}")))
}
