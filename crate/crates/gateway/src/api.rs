//! HTTP/JSON service. Long computations run as jobs on a bounded worker
//! pool; surrogate prediction answers synchronously.

use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bedtwin_core::domain::{FeatureVector, Scenario, FEATURE_COUNT};
use bedtwin_core::gbm::GbmModel;
use bedtwin_core::sim::SweepRanges;
use bedtwin_core::TrainParams;
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Semaphore;
use tower_http::services::ServeDir;

use crate::config::AppConfig;
use crate::ingest::{parse_csv, IngestError};
use crate::ops::{self, OpError, ShapMethod, SweepDesign, SweepGrid};
use crate::store::{DataStore, IngestOutcome, Job, JobKind, JobStore, ModelInfo, ModelStore};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            message: message.into(),
        }
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::CONFLICT,
            code: "conflict",
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: message.into(),
        }
    }
}

impl From<OpError> for ApiError {
    fn from(e: OpError) -> Self {
        match e {
            OpError::Invalid(m) => Self::bad_request(m),
            OpError::Failed(m) => Self::internal(m),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.into(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct AppState {
    pub config: AppConfig,
    data: Mutex<DataStore>,
    models: Mutex<ModelStore>,
    jobs: Mutex<JobStore>,
    workers: Arc<Semaphore>,
}

pub type SharedState = Arc<AppState>;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl AppState {
    pub fn open(config: AppConfig) -> std::io::Result<SharedState> {
        let dir = config.data_dir.as_deref();
        Ok(Arc::new(Self {
            data: Mutex::new(DataStore::open(dir)?),
            models: Mutex::new(ModelStore::open(dir)?),
            jobs: Mutex::new(JobStore::open(dir)?),
            workers: Arc::new(Semaphore::new(config.worker_count)),
            config,
        }))
    }

    pub fn job(&self, id: &str) -> Option<Job> {
        lock(&self.jobs).get(id).cloned()
    }

    fn model(&self, id: Option<&str>) -> ApiResult<(String, GbmModel)> {
        let models = lock(&self.models);
        match models.get(id) {
            Some((info, m)) => Ok((info.model_id.clone(), m.clone())),
            None => Err(ApiError::not_found(match id {
                Some(id) => format!("unknown model `{id}`"),
                None => "no trained model; train one first".into(),
            })),
        }
    }
}

/// Queues `work` and returns the queued job. The work runs on a blocking
/// thread once a worker slot is free.
pub fn submit<F>(state: &SharedState, kind: JobKind, work: F) -> Job
where
    F: FnOnce() -> Result<String, OpError> + Send + 'static,
{
    let job = lock(&state.jobs).submit(kind);
    let id = job.job_id.clone();
    let state = state.clone();
    tokio::spawn(async move {
        let _permit = state
            .workers
            .clone()
            .acquire_owned()
            .await
            .expect("worker pool open");
        let _ = lock(&state.jobs).start(&id);
        let outcome = match tokio::task::spawn_blocking(work).await {
            Ok(Ok(json)) => Ok(json),
            Ok(Err(e)) => Err(e.to_string()),
            Err(e) => Err(format!("job aborted: {e}")),
        };
        let _ = lock(&state.jobs).finish(&id, outcome);
    });
    job
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("invalid JSON payload: {e}")))
}

fn accepted(job: Job) -> Response {
    (StatusCode::ACCEPTED, Json(job)).into_response()
}

/// Scenario from a request body; absent settings come from the configured
/// defaults.
fn scenario_from(config: &AppConfig, body: &[u8]) -> ApiResult<Scenario> {
    let Value::Object(overrides) = parse_json::<Value>(body)? else {
        return Err(ApiError::bad_request("scenario must be a JSON object"));
    };
    if !overrides.contains_key("features") {
        return Err(ApiError::bad_request("scenario is missing `features`"));
    }
    let mut merged = serde_json::to_value(config.scenario.scenario(FeatureVector::default()))
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let obj = merged
        .as_object_mut()
        .expect("scenario serializes to an object");
    for (k, v) in overrides {
        obj.insert(k, v);
    }
    let scenario: Scenario = serde_json::from_value(merged)
        .map_err(|e| ApiError::bad_request(format!("invalid scenario: {e}")))?;
    scenario
        .validate()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(scenario)
}

async fn run_scenario(State(state): State<SharedState>, body: Bytes) -> ApiResult<Response> {
    let scenario = scenario_from(&state.config, &body)?;
    Ok(accepted(submit(&state, JobKind::Simulate, move || {
        ops::simulate(&scenario)
    })))
}

async fn get_job(State(state): State<SharedState>, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    state
        .job(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job `{id}`")))
}

async fn list_jobs(State(state): State<SharedState>) -> Json<Vec<Job>> {
    Json(lock(&state.jobs).list().into_iter().cloned().collect())
}

/// Feature vector given as 13 numbers in schema order or as a named object.
fn features_from(value: Value) -> ApiResult<FeatureVector> {
    let f = match value {
        Value::Array(items) => {
            let values: Vec<f64> = items
                .iter()
                .map(|v| {
                    v.as_f64().ok_or_else(|| {
                        ApiError::bad_request(format!("feature value {v} is not a number"))
                    })
                })
                .collect::<ApiResult<_>>()?;
            FeatureVector::from_slice(&values).map_err(|e| ApiError::bad_request(e.to_string()))?
        }
        obj @ Value::Object(_) => serde_json::from_value(obj).map_err(|e| {
            ApiError::bad_request(format!(
                "features must name all {FEATURE_COUNT} fields: {e}"
            ))
        })?,
        other => {
            return Err(ApiError::bad_request(format!(
                "features must be an array of {FEATURE_COUNT} numbers or an object, got {other}"
            )))
        }
    };
    f.validate()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(f)
}

#[derive(Debug, Deserialize)]
struct ModelQuery {
    model_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Prediction {
    pub model_id: String,
    pub predicted_btt: f64,
}

async fn predict(
    State(state): State<SharedState>,
    Query(q): Query<ModelQuery>,
    body: Bytes,
) -> ApiResult<Json<Prediction>> {
    let value: Value = parse_json(&body)?;
    let (model_id, features) = match value {
        Value::Object(mut obj) if obj.contains_key("features") => {
            let id = match obj.remove("model_id") {
                Some(Value::String(s)) => Some(s),
                Some(Value::Null) | None => None,
                Some(other) => {
                    return Err(ApiError::bad_request(format!(
                        "model_id must be a string, got {other}"
                    )))
                }
            };
            (
                id.or(q.model_id),
                features_from(obj.remove("features").expect("checked"))?,
            )
        }
        other => (q.model_id, features_from(other)?),
    };
    let (model_id, model) = state.model(model_id.as_deref())?;
    let predicted_btt = model
        .predict_features(&features)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(Prediction {
        model_id,
        predicted_btt,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
enum TrainSource {
    /// Ingested records with an observed BTT.
    Dataset {
        #[serde(default)]
        facility_id: Option<String>,
        #[serde(default)]
        params: Option<TrainParams>,
    },
    /// Fresh simulated sweep.
    Sweep {
        n: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        ranges: SweepRanges,
        #[serde(default)]
        replications: Option<u32>,
        #[serde(default)]
        params: Option<TrainParams>,
    },
}

#[derive(Debug, Serialize)]
struct TrainResult {
    model_id: String,
    #[serde(flatten)]
    report: ops::TrainReport,
}

async fn train(State(state): State<SharedState>, body: Bytes) -> ApiResult<Response> {
    let source: TrainSource = parse_json(&body)?;
    let config = &state.config;
    let work: Box<dyn FnOnce() -> Result<(GbmModel, ops::TrainReport), OpError> + Send> =
        match source {
            TrainSource::Dataset {
                facility_id,
                params,
            } => {
                let params = params.unwrap_or(config.train);
                params
                    .validate()
                    .map_err(|e| ApiError::bad_request(e.to_string()))?;
                let records = lock(&state.data).records(facility_id.as_deref());
                let (x, y): (Vec<FeatureVector>, Vec<f64>) = records
                    .iter()
                    .filter_map(|r| r.actual_btt.map(|a| (r.features, a)))
                    .unzip();
                if x.is_empty() {
                    return Err(ApiError::bad_request("no ingested records with actual_btt"));
                }
                let label = match &facility_id {
                    Some(f) => format!("dataset:{f}"),
                    None => "dataset".into(),
                };
                Box::new(move || ops::train_on_rows(&x, &y, &params, &label))
            }
            TrainSource::Sweep {
                n,
                seed,
                ranges,
                replications,
                params,
            } => {
                let params = params.unwrap_or(config.train);
                params
                    .validate()
                    .map_err(|e| ApiError::bad_request(e.to_string()))?;
                let grid = SweepGrid::Design(Box::new(SweepDesign {
                    n,
                    seed,
                    ranges,
                    base: None,
                    replications,
                }))
                .expand(&config.scenario)?;
                Box::new(move || ops::train_on_sweep(&ops::run_sweep(&grid)?, &params))
            }
        };
    let models = state.clone();
    let job = submit(&state, JobKind::Train, move || {
        let (model, report) = work()?;
        let model_id = uuid::Uuid::new_v4().to_string();
        let info = ModelInfo {
            model_id: model_id.clone(),
            created_at: Utc::now(),
            source: report.source.clone(),
            n_train: report.n_train,
            holdout_mae: report.holdout_mae,
        };
        lock(&models.models)
            .insert(info, model)
            .map_err(|e| OpError::Failed(format!("cannot store model: {e}")))?;
        Ok(ops::to_json(&TrainResult { model_id, report }))
    });
    Ok(accepted(job))
}

async fn list_models(State(state): State<SharedState>) -> Json<Vec<ModelInfo>> {
    Json(lock(&state.models).list())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensitivityRequest {
    #[serde(default)]
    model_id: Option<String>,
    /// Rows to explain; defaults to every ingested record.
    #[serde(default)]
    rows: Option<Vec<Value>>,
    #[serde(default)]
    method: Option<ShapMethod>,
    #[serde(default)]
    background_size: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

async fn sensitivity(State(state): State<SharedState>, body: Bytes) -> ApiResult<Response> {
    let req: SensitivityRequest = parse_json(&body)?;
    let (_, model) = state.model(req.model_id.as_deref())?;
    let rows: Vec<FeatureVector> = match req.rows {
        Some(rows) => rows
            .into_iter()
            .map(features_from)
            .collect::<ApiResult<_>>()?,
        None => lock(&state.data)
            .records(None)
            .iter()
            .map(|r| r.features)
            .collect(),
    };
    if rows.is_empty() {
        return Err(ApiError::bad_request("no rows to explain"));
    }
    let defaults = &state.config.sensitivity;
    let method = req.method.unwrap_or(match defaults.n_permutations {
        0 => ShapMethod::Exact,
        n => ShapMethod::Sampled { n_permutations: n },
    });
    let background = req.background_size.unwrap_or(defaults.background_size);
    let seed = req.seed.unwrap_or(defaults.seed);
    let job = submit(&state, JobKind::Sensitivity, move || {
        Ok(ops::to_json(&ops::sensitivity(
            &model, &rows, method, background, seed,
        )?))
    });
    Ok(accepted(job))
}

async fn facilities(State(state): State<SharedState>) -> Json<Value> {
    Json(serde_json::json!(lock(&state.data).facilities()))
}

async fn ingest(State(state): State<SharedState>, body: Bytes) -> ApiResult<Response> {
    let records = parse_csv(body.as_ref()).map_err(|e| match e {
        IngestError::Io { .. } => ApiError::internal(e.to_string()),
        other => ApiError::bad_request(other.to_string()),
    })?;
    let summary = lock(&state.data).ingest(records).map_err(|e| match e {
        IngestOutcome::Conflicts(c) => ApiError::conflict(format!(
            "{} row(s) conflict with stored records: {}",
            c.len(),
            c.iter()
                .map(|c| format!("{}/{}", c.facility_id, c.date))
                .collect::<Vec<_>>()
                .join(", ")
        )),
        IngestOutcome::Io(e) => ApiError::internal(format!("cannot persist records: {e}")),
    })?;
    Ok(Json(summary).into_response())
}

#[derive(Debug, Deserialize)]
struct ValidationQuery {
    model_id: Option<String>,
    facility_id: Option<String>,
    #[serde(default)]
    sim: bool,
}

/// Model-only reports are computed inline; `sim=true` queues a job because
/// every record runs a full scenario.
async fn validation_report(
    State(state): State<SharedState>,
    Query(q): Query<ValidationQuery>,
) -> ApiResult<Response> {
    let (_, model) = state.model(q.model_id.as_deref())?;
    let records = lock(&state.data).records(q.facility_id.as_deref());
    if !records.iter().any(|r| r.actual_btt.is_some()) {
        return Err(ApiError::not_found("no ingested records with actual_btt"));
    }
    let threshold = state.config.outlier_threshold;
    if q.sim {
        let defaults = state.config.scenario.clone();
        let job = submit(&state, JobKind::Validate, move || {
            Ok(ops::to_json(&ops::validate(
                &records,
                &model,
                Some(&defaults),
                threshold,
            )?))
        });
        return Ok(accepted(job));
    }
    let out = ops::validate(&records, &model, None, threshold)?;
    Ok(Json(out).into_response())
}

async fn api_not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: SharedState) -> Router {
    let api = Router::new()
        .route("/scenarios/run", post(run_scenario))
        .route("/jobs", get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/surrogate/train", post(train))
        .route("/surrogate/predict", post(predict))
        .route("/models", get(list_models))
        .route("/sensitivity/global", post(sensitivity))
        .route("/facilities", get(facilities))
        .route("/data/ingest", post(ingest))
        .route("/reports/validation", get(validation_report))
        .fallback(api_not_found);
    let app = Router::new().nest("/api", api);
    let app = match &state.config.static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    };
    app.with_state(state)
}

/// Binds the configured address and serves until Ctrl-C.
pub async fn serve(config: AppConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(&config.bind).await?;
    let state = AppState::open(config)?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
