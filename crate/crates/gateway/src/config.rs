use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use bedtwin_core::domain::{
    FeatureVector, Scenario, DEFAULT_HORIZON_DAYS, DEFAULT_REPLICATIONS, DEFAULT_STAGE_CV,
    DEFAULT_WARMUP_DAYS,
};
use bedtwin_core::shap::DEFAULT_BACKGROUND_SIZE;
use bedtwin_core::validation::DEFAULT_OUTLIER_THRESHOLD;
use bedtwin_core::TrainParams;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_ENV: &str = "BEDTWIN_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {message}")]
    Field { field: String, message: String },
}

fn field(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.into(),
    }
}

/// Defaults applied to scenarios submitted without these settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioDefaults {
    pub horizon_days: u32,
    pub warmup_days: u32,
    pub replications: u32,
    pub seed: u64,
    pub stage_cv: f64,
}

impl Default for ScenarioDefaults {
    fn default() -> Self {
        Self {
            horizon_days: DEFAULT_HORIZON_DAYS,
            warmup_days: DEFAULT_WARMUP_DAYS,
            replications: DEFAULT_REPLICATIONS,
            seed: 0,
            stage_cv: DEFAULT_STAGE_CV,
        }
    }
}

impl ScenarioDefaults {
    /// Scenario with these settings around `features`.
    pub fn scenario(&self, features: FeatureVector) -> Scenario {
        let mut s = Scenario::new(features);
        s.horizon_days = self.horizon_days;
        s.warmup_days = self.warmup_days;
        s.replications = self.replications;
        s.seed = self.seed;
        s.stage_cv = self.stage_cv;
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityDefaults {
    pub background_size: usize,
    /// Sampled permutations; 0 selects exact enumeration.
    pub n_permutations: usize,
    pub seed: u64,
}

impl Default for SensitivityDefaults {
    fn default() -> Self {
        Self {
            background_size: DEFAULT_BACKGROUND_SIZE,
            n_permutations: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Directory for the append-only dataset, job and model files. Without
    /// it everything lives in memory.
    pub data_dir: Option<PathBuf>,
    /// UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
    pub bind: String,
    pub worker_count: usize,
    pub scenario: ScenarioDefaults,
    pub train: TrainParams,
    pub sensitivity: SensitivityDefaults,
    pub outlier_threshold: f64,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            static_dir: None,
            bind: "127.0.0.1:8080".into(),
            worker_count: 2,
            scenario: ScenarioDefaults::default(),
            train: TrainParams::default(),
            sensitivity: SensitivityDefaults::default(),
            outlier_threshold: DEFAULT_OUTLIER_THRESHOLD,
        }
    }
}

impl AppConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: AppConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    /// Explicit path first, then `BEDTWIN_CONFIG`, then built-in defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        Self::resolve_with(explicit, std::env::var_os(CONFIG_ENV).map(PathBuf::from))
    }

    pub fn resolve_with(
        explicit: Option<&Path>,
        env: Option<PathBuf>,
    ) -> Result<Self, ConfigError> {
        match explicit.map(Path::to_path_buf).or(env) {
            Some(p) => Self::load(&p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.bind.parse::<SocketAddr>().map_err(|e| {
            field(
                "bind",
                format!("`{}` is not a socket address: {e}", self.bind),
            )
        })?;
        if self.worker_count == 0 {
            return Err(field("worker_count", "must be at least 1"));
        }
        let s = &self.scenario;
        if s.horizon_days == 0 {
            return Err(field("scenario.horizon_days", "must be at least 1"));
        }
        if s.warmup_days >= s.horizon_days {
            return Err(field(
                "scenario.warmup_days",
                "must be less than scenario.horizon_days",
            ));
        }
        if s.replications == 0 {
            return Err(field("scenario.replications", "must be at least 1"));
        }
        if !(s.stage_cv.is_finite() && s.stage_cv >= 0.0) {
            return Err(field(
                "scenario.stage_cv",
                "must be finite and non-negative",
            ));
        }
        let t = &self.train;
        if t.n_trees == 0 {
            return Err(field("train.n_trees", "must be at least 1"));
        }
        if t.max_depth == 0 {
            return Err(field("train.max_depth", "must be at least 1"));
        }
        if t.min_samples_leaf == 0 {
            return Err(field("train.min_samples_leaf", "must be at least 1"));
        }
        if !(t.learning_rate > 0.0 && t.learning_rate <= 1.0) {
            return Err(field("train.learning_rate", "must be in (0, 1]"));
        }
        if !(t.subsample > 0.0 && t.subsample <= 1.0) {
            return Err(field("train.subsample", "must be in (0, 1]"));
        }
        if self.sensitivity.background_size == 0 {
            return Err(field("sensitivity.background_size", "must be at least 1"));
        }
        if !self.outlier_threshold.is_finite() {
            return Err(field("outlier_threshold", "must be finite"));
        }
        if let Some(dir) = &self.static_dir {
            if !dir.is_dir() {
                return Err(field(
                    "static_dir",
                    format!("{} is not a directory", dir.display()),
                ));
            }
        }
        Ok(())
    }
}
