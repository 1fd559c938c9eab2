//! In-process stores for the service: ingested records, trained models and
//! jobs. With a data directory each store appends JSON lines to its own
//! file and replays it on startup.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use bedtwin_core::domain::DailyRecord;
use bedtwin_core::gbm::{self, GbmModel};
use chrono::{DateTime, NaiveDate, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

struct Log {
    path: PathBuf,
}

impl Log {
    fn open(dir: Option<&Path>, name: &str) -> io::Result<Option<Log>> {
        let Some(dir) = dir else { return Ok(None) };
        std::fs::create_dir_all(dir)?;
        Ok(Some(Log {
            path: dir.join(name),
        }))
    }

    fn replay<T: DeserializeOwned>(&self) -> io::Result<Vec<T>> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{} line {}: {e}", self.path.display(), i + 1),
                )
            })?);
        }
        Ok(out)
    }

    fn append<T: Serialize>(&self, items: &[T]) -> io::Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        let mut buf = String::new();
        for item in items {
            buf.push_str(&serde_json::to_string(item).map_err(io::Error::other)?);
            buf.push('\n');
        }
        f.write_all(buf.as_bytes())?;
        f.sync_data()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub inserted: usize,
    pub unchanged: usize,
    pub total_records: usize,
}

/// A batch row whose (facility, date) is already stored with other values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub facility_id: String,
    pub date: NaiveDate,
}

#[derive(Debug)]
pub enum IngestOutcome {
    Conflicts(Vec<Conflict>),
    Io(io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilitySummary {
    pub facility_id: String,
    pub n_days: usize,
    pub n_with_actual: usize,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
}

pub struct DataStore {
    records: BTreeMap<(String, NaiveDate), DailyRecord>,
    log: Option<Log>,
}

impl DataStore {
    pub fn open(dir: Option<&Path>) -> io::Result<Self> {
        let log = Log::open(dir, "records.jsonl")?;
        let mut records = BTreeMap::new();
        if let Some(log) = &log {
            for r in log.replay::<DailyRecord>()? {
                records.insert((r.facility_id.clone(), r.date), r);
            }
        }
        Ok(Self { records, log })
    }

    /// All-or-nothing: any conflicting row rejects the whole batch.
    /// Rows identical to stored ones are skipped.
    pub fn ingest(&mut self, batch: Vec<DailyRecord>) -> Result<IngestSummary, IngestOutcome> {
        let mut conflicts = Vec::new();
        let mut fresh = Vec::new();
        let mut unchanged = 0;
        for r in batch {
            match self.records.get(&(r.facility_id.clone(), r.date)) {
                Some(existing) if *existing == r => unchanged += 1,
                Some(_) => conflicts.push(Conflict {
                    facility_id: r.facility_id.clone(),
                    date: r.date,
                }),
                None => fresh.push(r),
            }
        }
        if !conflicts.is_empty() {
            return Err(IngestOutcome::Conflicts(conflicts));
        }
        if let Some(log) = &self.log {
            log.append(&fresh).map_err(IngestOutcome::Io)?;
        }
        let inserted = fresh.len();
        for r in fresh {
            self.records.insert((r.facility_id.clone(), r.date), r);
        }
        Ok(IngestSummary {
            inserted,
            unchanged,
            total_records: self.records.len(),
        })
    }

    pub fn records(&self, facility: Option<&str>) -> Vec<DailyRecord> {
        self.records
            .values()
            .filter(|r| facility.is_none_or(|f| r.facility_id == f))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn facilities(&self) -> Vec<FacilitySummary> {
        let mut out: Vec<FacilitySummary> = Vec::new();
        for r in self.records.values() {
            match out.last_mut() {
                Some(s) if s.facility_id == r.facility_id => {
                    s.n_days += 1;
                    s.n_with_actual += r.actual_btt.is_some() as usize;
                    s.last_date = r.date;
                }
                _ => out.push(FacilitySummary {
                    facility_id: r.facility_id.clone(),
                    n_days: 1,
                    n_with_actual: r.actual_btt.is_some() as usize,
                    first_date: r.date,
                    last_date: r.date,
                }),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub created_at: DateTime<Utc>,
    pub source: String,
    pub n_train: usize,
    pub holdout_mae: Option<f64>,
}

pub struct ModelStore {
    models: HashMap<String, (ModelInfo, GbmModel)>,
    order: Vec<String>,
    dir: Option<PathBuf>,
    log: Option<Log>,
}

impl ModelStore {
    pub fn open(dir: Option<&Path>) -> io::Result<Self> {
        let log = Log::open(dir, "models.jsonl")?;
        let dir = dir.map(|d| d.join("models"));
        let mut store = Self {
            models: HashMap::new(),
            order: Vec::new(),
            dir,
            log: None,
        };
        if let Some(log) = &log {
            for info in log.replay::<ModelInfo>()? {
                let path = store.model_path(&info.model_id).expect("directory present");
                let bytes = std::fs::read(&path)?;
                let model = gbm::load(&bytes).map_err(|e| {
                    io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("{}: {e}", path.display()),
                    )
                })?;
                store.order.push(info.model_id.clone());
                store.models.insert(info.model_id.clone(), (info, model));
            }
        }
        store.log = log;
        Ok(store)
    }

    fn model_path(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    pub fn insert(&mut self, info: ModelInfo, model: GbmModel) -> io::Result<()> {
        if let Some(path) = self.model_path(&info.model_id) {
            std::fs::create_dir_all(path.parent().expect("models directory"))?;
            std::fs::write(&path, gbm::save(&model))?;
        }
        if let Some(log) = &self.log {
            log.append(std::slice::from_ref(&info))?;
        }
        self.order.push(info.model_id.clone());
        self.models.insert(info.model_id.clone(), (info, model));
        Ok(())
    }

    /// The named model, or the most recently trained one.
    pub fn get(&self, id: Option<&str>) -> Option<(&ModelInfo, &GbmModel)> {
        let id = match id {
            Some(id) => id,
            None => self.order.last()?,
        };
        self.models.get(id).map(|(i, m)| (i, m))
    }

    pub fn list(&self) -> Vec<ModelInfo> {
        self.order
            .iter()
            .map(|id| self.models[id].0.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Simulate,
    Train,
    Validate,
    Sensitivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    fn can_become(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Running)
                | (JobStatus::Running, JobStatus::Done)
                | (JobStatus::Running, JobStatus::Failed)
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub submitted_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    /// Present only when `status` is `done`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Box<RawValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    pub status_history: Vec<JobStatus>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobUpdateError {
    Unknown(String),
    Transition { from: JobStatus, to: JobStatus },
}

pub struct JobStore {
    jobs: HashMap<String, Job>,
    order: Vec<String>,
    log: Option<Log>,
}

/// Message attached to jobs that were unfinished when the service stopped.
pub const INTERRUPTED: &str = "service stopped before the job finished";

impl JobStore {
    pub fn open(dir: Option<&Path>) -> io::Result<Self> {
        let log = Log::open(dir, "jobs.jsonl")?;
        let mut store = Self {
            jobs: HashMap::new(),
            order: Vec::new(),
            log: None,
        };
        if let Some(log) = &log {
            for job in log.replay::<Job>()? {
                if !store.jobs.contains_key(&job.job_id) {
                    store.order.push(job.job_id.clone());
                }
                store.jobs.insert(job.job_id.clone(), job);
            }
        }
        for job in store.jobs.values_mut() {
            if matches!(job.status, JobStatus::Queued | JobStatus::Running) {
                if job.status == JobStatus::Queued {
                    job.status_history.push(JobStatus::Running);
                }
                job.status = JobStatus::Failed;
                job.status_history.push(JobStatus::Failed);
                job.error_message = Some(INTERRUPTED.into());
            }
        }
        store.log = log;
        Ok(store)
    }

    fn persist(&self, id: &str) {
        if let Some(log) = &self.log {
            // The in-memory store stays authoritative if the log write fails.
            let _ = log.append(std::slice::from_ref(&self.jobs[id]));
        }
    }

    pub fn submit(&mut self, kind: JobKind) -> Job {
        let job = Job {
            job_id: uuid::Uuid::new_v4().to_string(),
            kind,
            status: JobStatus::Queued,
            submitted_at: Utc::now(),
            started_at: None,
            finished_at: None,
            result: None,
            error_message: None,
            status_history: vec![JobStatus::Queued],
        };
        self.order.push(job.job_id.clone());
        self.jobs.insert(job.job_id.clone(), job.clone());
        self.persist(&job.job_id);
        job
    }

    fn transition(&mut self, id: &str, to: JobStatus) -> Result<&mut Job, JobUpdateError> {
        let job = self
            .jobs
            .get_mut(id)
            .ok_or_else(|| JobUpdateError::Unknown(id.into()))?;
        if !job.status.can_become(to) {
            return Err(JobUpdateError::Transition {
                from: job.status,
                to,
            });
        }
        job.status = to;
        job.status_history.push(to);
        Ok(job)
    }

    pub fn start(&mut self, id: &str) -> Result<(), JobUpdateError> {
        self.transition(id, JobStatus::Running)?.started_at = Some(Utc::now());
        self.persist(id);
        Ok(())
    }

    pub fn finish(
        &mut self,
        id: &str,
        outcome: Result<String, String>,
    ) -> Result<(), JobUpdateError> {
        let to = if outcome.is_ok() {
            JobStatus::Done
        } else {
            JobStatus::Failed
        };
        let job = self.transition(id, to)?;
        job.finished_at = Some(Utc::now());
        match outcome {
            Ok(json) => match RawValue::from_string(json) {
                Ok(raw) => job.result = Some(raw),
                Err(e) => {
                    job.status = JobStatus::Failed;
                    *job.status_history.last_mut().expect("non-empty history") = JobStatus::Failed;
                    job.error_message = Some(format!("result is not valid JSON: {e}"));
                }
            },
            Err(message) => job.error_message = Some(message),
        }
        self.persist(id);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Job> {
        self.jobs.get(id)
    }

    pub fn list(&self) -> Vec<&Job> {
        self.order.iter().map(|id| &self.jobs[id]).collect()
    }
}
