//! Shared vocabulary for the discharge-to-bed-ready twin: shifts, the daily
//! feature schema, empirical duration distributions and scenarios.
//!
//! All durations are minutes. Staffing and discharge features are daily
//! averages and therefore real-valued.

use std::fmt;

use chrono::NaiveDate;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Random stream used throughout the simulator and samplers.
pub type SimRng = ChaCha8Rng;

pub const MINUTES_PER_DAY: u32 = 1440;

/// Number of daily features in the canonical schema.
pub const FEATURE_COUNT: usize = 13;

/// Canonical feature names, in index order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "day_discharges",
    "eve_discharges",
    "night_discharges",
    "day_ua",
    "eve_ua",
    "night_ua",
    "day_evs",
    "eve_evs",
    "night_evs",
    "avg_dirty_wait",
    "avg_assigned_wait",
    "avg_clean_wait",
    "avg_in_progress_wait",
];

/// Exact CSV header of the daily dataset.
pub const CSV_HEADER: [&str; 16] = [
    "facility_id",
    "date",
    "day_discharges",
    "eve_discharges",
    "night_discharges",
    "day_ua",
    "eve_ua",
    "night_ua",
    "day_evs",
    "eve_evs",
    "night_evs",
    "avg_dirty_wait",
    "avg_assigned_wait",
    "avg_clean_wait",
    "avg_in_progress_wait",
    "actual_btt",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("schema violation in field `{field}`: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("cannot sample from empty distribution `{0}`")]
    EmptyDistribution(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid shift calendar: {0}")]
    InvalidCalendar(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

pub type Result<T, E = DomainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shift {
    Day,
    Evening,
    Night,
}

impl Shift {
    pub const ALL: [Shift; 3] = [Shift::Day, Shift::Evening, Shift::Night];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn next(self) -> Shift {
        match self {
            Shift::Day => Shift::Evening,
            Shift::Evening => Shift::Night,
            Shift::Night => Shift::Day,
        }
    }
}

impl fmt::Display for Shift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shift::Day => "day",
            Shift::Evening => "evening",
            Shift::Night => "night",
        })
    }
}

/// Start clock times (minutes from midnight) of the three shifts. Each shift
/// ends where the next one (Day → Evening → Night → Day) starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftCalendar {
    pub day_start: u32,
    pub evening_start: u32,
    pub night_start: u32,
}

impl Default for ShiftCalendar {
    fn default() -> Self {
        Self {
            day_start: 7 * 60,
            evening_start: 15 * 60,
            night_start: 23 * 60,
        }
    }
}

impl ShiftCalendar {
    pub fn new(day_start: u32, evening_start: u32, night_start: u32) -> Result<Self> {
        let cal = Self {
            day_start,
            evening_start,
            night_start,
        };
        cal.validate()?;
        Ok(cal)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("day_start", self.day_start),
            ("evening_start", self.evening_start),
            ("night_start", self.night_start),
        ] {
            if v >= MINUTES_PER_DAY {
                return Err(DomainError::InvalidCalendar(format!(
                    "{name} = {v} is not a clock time in [0, 1440)"
                )));
            }
        }
        let total: u32 = Shift::ALL.iter().map(|&s| self.cyclic_duration(s)).sum();
        if Shift::ALL.iter().any(|&s| self.cyclic_duration(s) == 0) || total != MINUTES_PER_DAY {
            return Err(DomainError::InvalidCalendar(
                "shifts must start in day, evening, night order and each last > 0 minutes".into(),
            ));
        }
        Ok(())
    }

    pub fn start(&self, shift: Shift) -> u32 {
        match shift {
            Shift::Day => self.day_start,
            Shift::Evening => self.evening_start,
            Shift::Night => self.night_start,
        }
    }

    fn cyclic_duration(&self, shift: Shift) -> u32 {
        let start = self.start(shift);
        let end = self.start(shift.next());
        (end + MINUTES_PER_DAY - start) % MINUTES_PER_DAY
    }

    /// Shift length in minutes.
    pub fn duration(&self, shift: Shift) -> u32 {
        self.cyclic_duration(shift)
    }

    /// Offset of a shift from the start of the operational day, which begins
    /// at `day_start`.
    pub fn offset(&self, shift: Shift) -> u32 {
        (self.start(shift) + MINUTES_PER_DAY - self.day_start) % MINUTES_PER_DAY
    }

    /// Shift in force at a clock time (minutes from midnight, any value;
    /// reduced modulo one day).
    pub fn shift_at_clock(&self, minute_of_day: f64) -> Shift {
        let m = minute_of_day.rem_euclid(MINUTES_PER_DAY as f64);
        let since_day = (m - self.day_start as f64).rem_euclid(MINUTES_PER_DAY as f64);
        if since_day < self.offset(Shift::Evening) as f64 {
            Shift::Day
        } else if since_day < self.offset(Shift::Night) as f64 {
            Shift::Evening
        } else {
            Shift::Night
        }
    }

    /// Simulation-time window `[start, end)` of a shift on operational day
    /// `day`. Simulation time zero is the start of day 0's day shift.
    pub fn window(&self, day: u32, shift: Shift) -> (f64, f64) {
        let start = day as f64 * MINUTES_PER_DAY as f64 + self.offset(shift) as f64;
        (start, start + self.duration(shift) as f64)
    }

    /// Shift in force at a simulation time (see [`ShiftCalendar::window`]).
    pub fn shift_at_sim(&self, t: f64) -> Shift {
        self.shift_at_clock(t + self.day_start as f64)
    }

    /// Simulation time of the first shift boundary strictly after `t`.
    pub fn next_boundary_after(&self, t: f64) -> (f64, Shift) {
        let day_len = MINUTES_PER_DAY as f64;
        let day = (t / day_len).floor().max(0.0) as u32;
        let mut best: Option<(f64, Shift)> = None;
        for d in day..=day + 1 {
            for s in Shift::ALL {
                let (start, _) = self.window(d, s);
                if start > t && best.is_none_or(|(b, _)| start < b) {
                    best = Some((start, s));
                }
            }
        }
        best.expect("a boundary exists within two days")
    }
}

/// The 13 daily scenario inputs in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub day_discharges: f64,
    pub eve_discharges: f64,
    pub night_discharges: f64,
    pub day_ua: f64,
    pub eve_ua: f64,
    pub night_ua: f64,
    pub day_evs: f64,
    pub eve_evs: f64,
    pub night_evs: f64,
    pub avg_dirty_wait: f64,
    pub avg_assigned_wait: f64,
    pub avg_clean_wait: f64,
    pub avg_in_progress_wait: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.day_discharges,
            self.eve_discharges,
            self.night_discharges,
            self.day_ua,
            self.eve_ua,
            self.night_ua,
            self.day_evs,
            self.eve_evs,
            self.night_evs,
            self.avg_dirty_wait,
            self.avg_assigned_wait,
            self.avg_clean_wait,
            self.avg_in_progress_wait,
        ]
    }

    /// Builds a vector from canonical index order without validation.
    pub fn from_array(v: [f64; FEATURE_COUNT]) -> Self {
        Self {
            day_discharges: v[0],
            eve_discharges: v[1],
            night_discharges: v[2],
            day_ua: v[3],
            eve_ua: v[4],
            night_ua: v[5],
            day_evs: v[6],
            eve_evs: v[7],
            night_evs: v[8],
            avg_dirty_wait: v[9],
            avg_assigned_wait: v[10],
            avg_clean_wait: v[11],
            avg_in_progress_wait: v[12],
        }
    }

    /// Validated construction from a slice; the length must be 13.
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; FEATURE_COUNT] = v.try_into().map_err(|_| DomainError::SchemaViolation {
            field: "features".into(),
            reason: format!("expected length {FEATURE_COUNT}, got {}", v.len()),
        })?;
        let fv = Self::from_array(arr);
        fv.validate()?;
        Ok(fv)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in FEATURE_NAMES.iter().zip(self.to_array()) {
            check_non_negative(name, value)?;
        }
        Ok(())
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.to_array().get(index).copied()
    }

    pub fn discharges(&self, shift: Shift) -> f64 {
        self.to_array()[shift.index()]
    }

    pub fn ua(&self, shift: Shift) -> f64 {
        self.to_array()[3 + shift.index()]
    }

    pub fn evs(&self, shift: Shift) -> f64 {
        self.to_array()[6 + shift.index()]
    }

    /// Mean durations of the dirty, assigned, clean and in-progress stages.
    pub fn stage_means(&self) -> [f64; 4] {
        [
            self.avg_dirty_wait,
            self.avg_assigned_wait,
            self.avg_clean_wait,
            self.avg_in_progress_wait,
        ]
    }
}

fn check_non_negative(field: &str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(DomainError::SchemaViolation {
            field: field.to_string(),
            reason: format!("value {value} is not finite"),
        });
    }
    if value < 0.0 {
        return Err(DomainError::SchemaViolation {
            field: field.to_string(),
            reason: format!("value {value} is negative"),
        });
    }
    Ok(())
}

/// One row of the daily dataset exactly as it appears in the CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDailyRow {
    pub facility_id: String,
    pub date: String,
    pub day_discharges: String,
    pub eve_discharges: String,
    pub night_discharges: String,
    pub day_ua: String,
    pub eve_ua: String,
    pub night_ua: String,
    pub day_evs: String,
    pub eve_evs: String,
    pub night_evs: String,
    pub avg_dirty_wait: String,
    pub avg_assigned_wait: String,
    pub avg_clean_wait: String,
    pub avg_in_progress_wait: String,
    pub actual_btt: String,
}

impl RawDailyRow {
    fn feature_fields(&self) -> [&str; FEATURE_COUNT] {
        [
            &self.day_discharges,
            &self.eve_discharges,
            &self.night_discharges,
            &self.day_ua,
            &self.eve_ua,
            &self.night_ua,
            &self.day_evs,
            &self.eve_evs,
            &self.night_evs,
            &self.avg_dirty_wait,
            &self.avg_assigned_wait,
            &self.avg_clean_wait,
            &self.avg_in_progress_wait,
        ]
    }
}

fn parse_non_negative(field: &str, raw: &str) -> Result<f64> {
    let value: f64 = raw
        .trim()
        .parse()
        .map_err(|_| DomainError::SchemaViolation {
            field: field.to_string(),
            reason: format!("`{raw}` is not a number"),
        })?;
    check_non_negative(field, value)?;
    Ok(value)
}

/// Parses and validates the 13 feature fields of a raw row.
pub fn build_feature_vector(row: &RawDailyRow) -> Result<FeatureVector> {
    let mut values = [0.0; FEATURE_COUNT];
    for (i, raw) in row.feature_fields().into_iter().enumerate() {
        values[i] = parse_non_negative(FEATURE_NAMES[i], raw)?;
    }
    Ok(FeatureVector::from_array(values))
}

/// One facility-day of observed operations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub facility_id: String,
    pub date: NaiveDate,
    pub features: FeatureVector,
    pub actual_btt: Option<f64>,
}

impl DailyRecord {
    pub fn from_raw(row: &RawDailyRow) -> Result<Self> {
        if row.facility_id.trim().is_empty() {
            return Err(DomainError::SchemaViolation {
                field: "facility_id".into(),
                reason: "empty".into(),
            });
        }
        let date = NaiveDate::parse_from_str(row.date.trim(), "%Y-%m-%d").map_err(|e| {
            DomainError::SchemaViolation {
                field: "date".into(),
                reason: format!("`{}` is not an ISO-8601 date: {e}", row.date),
            }
        })?;
        let features = build_feature_vector(row)?;
        let actual_btt = if row.actual_btt.trim().is_empty() {
            None
        } else {
            Some(parse_non_negative("actual_btt", &row.actual_btt)?)
        };
        Ok(Self {
            facility_id: row.facility_id.trim().to_string(),
            date,
            features,
            actual_btt,
        })
    }

    pub fn to_raw(&self) -> RawDailyRow {
        let f = self.features.to_array().map(|v| v.to_string());
        RawDailyRow {
            facility_id: self.facility_id.clone(),
            date: self.date.format("%Y-%m-%d").to_string(),
            day_discharges: f[0].clone(),
            eve_discharges: f[1].clone(),
            night_discharges: f[2].clone(),
            day_ua: f[3].clone(),
            eve_ua: f[4].clone(),
            night_ua: f[5].clone(),
            day_evs: f[6].clone(),
            eve_evs: f[7].clone(),
            night_evs: f[8].clone(),
            avg_dirty_wait: f[9].clone(),
            avg_assigned_wait: f[10].clone(),
            avg_clean_wait: f[11].clone(),
            avg_in_progress_wait: f[12].clone(),
            actual_btt: self.actual_btt.map(|v| v.to_string()).unwrap_or_default(),
        }
    }
}

/// A bag of observed values; sampling picks one uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDist {
    pub samples: Vec<f64>,
    pub label: String,
}

impl EmpiricalDist {
    pub fn new(label: impl Into<String>, samples: Vec<f64>) -> Result<Self> {
        let dist = Self {
            samples,
            label: label.into(),
        };
        dist.validate()?;
        Ok(dist)
    }

    pub fn validate(&self) -> Result<()> {
        for &s in &self.samples {
            check_non_negative(&self.label, s)?;
        }
        Ok(())
    }

    pub fn mean(&self) -> Option<f64> {
        if self.samples.is_empty() {
            None
        } else {
            Some(self.samples.iter().sum::<f64>() / self.samples.len() as f64)
        }
    }

    /// Uniform choice among the samples using exactly one 64-bit draw.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let n = self.samples.len();
        if n == 0 {
            return Err(DomainError::EmptyDistribution(self.label.clone()));
        }
        // Multiply-shift maps the draw onto 0..n without rejection.
        let idx = ((rng.next_u64() as u128 * n as u128) >> 64) as usize;
        Ok(self.samples[idx])
    }
}

pub const FALLBACK_SAMPLES: usize = 1024;

/// Lognormal stand-in used when only a mean duration is known: 1024 draws
/// with the requested mean and coefficient of variation.
pub fn fallback_dist(mean: f64, cv: f64, seed: u64) -> Result<EmpiricalDist> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(DomainError::Domain(format!(
            "fallback mean {mean} must be finite and >= 0"
        )));
    }
    if !cv.is_finite() || cv < 0.0 {
        return Err(DomainError::Domain(format!(
            "fallback cv {cv} must be finite and >= 0"
        )));
    }
    let label = format!("lognormal(mean={mean}, cv={cv})");
    if mean == 0.0 || cv == 0.0 {
        return EmpiricalDist::new(label, vec![mean; FALLBACK_SAMPLES]);
    }
    let sigma2 = (1.0 + cv * cv).ln();
    let mu = mean.ln() - sigma2 / 2.0;
    let ln = LogNormal::new(mu, sigma2.sqrt())
        .map_err(|e| DomainError::Domain(format!("lognormal parameters: {e}")))?;
    let mut rng = SimRng::seed_from_u64(seed);
    let samples = (0..FALLBACK_SAMPLES).map(|_| ln.sample(&mut rng)).collect();
    EmpiricalDist::new(label, samples)
}

/// How discharge counts are drawn for each shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalMode {
    /// Poisson count with mean equal to the shift's discharge feature.
    #[default]
    Poisson,
    /// Count is the discharge feature rounded to the nearest integer.
    Exact,
}

/// Start point of the bed turnaround measurement. The end point is always
/// the moment the bed is ready.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BttStart {
    /// Patient wheel-out: the bed becomes dirty.
    #[default]
    Dirty,
    /// An EVS unit starts cleaning the bed.
    CleanStart,
}

pub const DEFAULT_HORIZON_DAYS: u32 = 100;
pub const DEFAULT_WARMUP_DAYS: u32 = 5;
pub const DEFAULT_REPLICATIONS: u32 = 30;
pub const DEFAULT_STAGE_CV: f64 = 0.5;

fn default_horizon() -> u32 {
    DEFAULT_HORIZON_DAYS
}
fn default_warmup() -> u32 {
    DEFAULT_WARMUP_DAYS
}
fn default_replications() -> u32 {
    DEFAULT_REPLICATIONS
}
fn default_cv() -> f64 {
    DEFAULT_STAGE_CV
}

/// A fully specified simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub features: FeatureVector,
    /// Optional empirical distributions for the four stages; a `None` stage
    /// falls back to a lognormal around the matching average feature.
    #[serde(default)]
    pub stage_dists: [Option<EmpiricalDist>; 4],
    #[serde(default = "default_horizon")]
    pub horizon_days: u32,
    #[serde(default = "default_warmup")]
    pub warmup_days: u32,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub calendar: ShiftCalendar,
    #[serde(default = "default_cv")]
    pub stage_cv: f64,
    #[serde(default)]
    pub arrival_mode: ArrivalMode,
    #[serde(default)]
    pub btt_start: BttStart,
}

impl Scenario {
    pub fn new(features: FeatureVector) -> Self {
        Self {
            features,
            stage_dists: Default::default(),
            horizon_days: DEFAULT_HORIZON_DAYS,
            warmup_days: DEFAULT_WARMUP_DAYS,
            replications: DEFAULT_REPLICATIONS,
            seed: 0,
            calendar: ShiftCalendar::default(),
            stage_cv: DEFAULT_STAGE_CV,
            arrival_mode: ArrivalMode::Poisson,
            btt_start: BttStart::Dirty,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.calendar.validate()?;
        if self.horizon_days == 0 {
            return Err(DomainError::InvalidScenario(
                "horizon_days must be >= 1".into(),
            ));
        }
        if self.warmup_days >= self.horizon_days {
            return Err(DomainError::InvalidScenario(format!(
                "warmup_days ({}) must be < horizon_days ({})",
                self.warmup_days, self.horizon_days
            )));
        }
        if self.replications == 0 {
            return Err(DomainError::InvalidScenario(
                "replications must be >= 1".into(),
            ));
        }
        if !self.stage_cv.is_finite() || self.stage_cv < 0.0 {
            return Err(DomainError::InvalidScenario(format!(
                "stage_cv {} must be finite and >= 0",
                self.stage_cv
            )));
        }
        for dist in self.stage_dists.iter().flatten() {
            dist.validate()?;
            if dist.samples.is_empty() {
                return Err(DomainError::EmptyDistribution(dist.label.clone()));
            }
        }
        Ok(())
    }

    /// Integral server count for a pool in a shift: nearest integer, ties up.
    pub fn capacity(staff: f64) -> u32 {
        staff.round() as u32
    }

    pub fn ua_capacity(&self) -> [u32; 3] {
        Shift::ALL.map(|s| Self::capacity(self.features.ua(s)))
    }

    pub fn evs_capacity(&self) -> [u32; 3] {
        Shift::ALL.map(|s| Self::capacity(self.features.evs(s)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(values: [&str; 13]) -> RawDailyRow {
        let v = values.map(String::from);
        RawDailyRow {
            facility_id: "F1".into(),
            date: "2021-04-11".into(),
            day_discharges: v[0].clone(),
            eve_discharges: v[1].clone(),
            night_discharges: v[2].clone(),
            day_ua: v[3].clone(),
            eve_ua: v[4].clone(),
            night_ua: v[5].clone(),
            day_evs: v[6].clone(),
            eve_evs: v[7].clone(),
            night_evs: v[8].clone(),
            avg_dirty_wait: v[9].clone(),
            avg_assigned_wait: v[10].clone(),
            avg_clean_wait: v[11].clone(),
            avg_in_progress_wait: v[12].clone(),
            actual_btt: String::new(),
        }
    }

    #[test]
    fn zero_record_gives_zero_vector() {
        let fv = build_feature_vector(&raw(["0"; 13])).unwrap();
        assert_eq!(fv.to_array(), [0.0; 13]);
    }

    #[test]
    fn named_fields_land_at_canonical_indices() {
        let mut fields = ["0"; 13];
        fields[0] = "20";
        fields[7] = "3";
        fields[11] = "30";
        let fv = build_feature_vector(&raw(fields)).unwrap();
        let arr = fv.to_array();
        assert_eq!(arr[0], 20.0);
        assert_eq!(arr[7], 3.0);
        assert_eq!(arr[11], 30.0);
        assert_eq!(fv.day_discharges, 20.0);
        assert_eq!(fv.eve_evs, 3.0);
        assert_eq!(fv.avg_clean_wait, 30.0);
        assert_eq!(arr.iter().filter(|&&v| v != 0.0).count(), 3);
    }

    #[test]
    fn negative_field_is_named_in_error() {
        let mut fields = ["1"; 13];
        fields[4] = "-2";
        match build_feature_vector(&raw(fields)) {
            Err(DomainError::SchemaViolation { field, .. }) => assert_eq!(field, "eve_ua"),
            other => panic!("unexpected {other:?}"),
        }
        fields[4] = "NaN";
        assert!(matches!(
            build_feature_vector(&raw(fields)),
            Err(DomainError::SchemaViolation { field, .. }) if field == "eve_ua"
        ));
    }

    #[test]
    fn from_slice_checks_length() {
        let err = FeatureVector::from_slice(&[0.0; 12]).unwrap_err();
        assert!(err.to_string().contains("13"), "{err}");
    }

    #[test]
    fn singleton_dist_always_returns_its_value() {
        let d = EmpiricalDist::new("one", vec![42.0]).unwrap();
        for seed in 0..20 {
            let mut rng = SimRng::seed_from_u64(seed);
            assert_eq!(d.sample(&mut rng).unwrap(), 42.0);
        }
    }

    #[test]
    fn empty_dist_errors() {
        let d = EmpiricalDist::new("none", vec![]).unwrap();
        let mut rng = SimRng::seed_from_u64(1);
        assert!(matches!(
            d.sample(&mut rng),
            Err(DomainError::EmptyDistribution(_))
        ));
    }

    #[test]
    fn uniform_choice_mean_converges() {
        let d = EmpiricalDist::new("1..9", (1..=9).map(f64::from).collect()).unwrap();
        let mut rng = SimRng::seed_from_u64(2024);
        let n = 100_000;
        let mean = (0..n).map(|_| d.sample(&mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 5.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn sample_consumes_exactly_one_draw() {
        let d = EmpiricalDist::new("x", vec![1.0, 2.0, 3.0]).unwrap();
        let mut a = SimRng::seed_from_u64(5);
        let mut b = SimRng::seed_from_u64(5);
        d.sample(&mut a).unwrap();
        b.next_u64();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn seeds_control_sequences() {
        let d = EmpiricalDist::new("x", (0..50).map(f64::from).collect()).unwrap();
        let draw = |seed| {
            let mut rng = SimRng::seed_from_u64(seed);
            (0..100)
                .map(|_| d.sample(&mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn fallback_degenerate_cases() {
        assert!(fallback_dist(0.0, 0.5, 1)
            .unwrap()
            .samples
            .iter()
            .all(|&s| s == 0.0));
        let flat = fallback_dist(30.0, 0.0, 1).unwrap();
        assert_eq!(flat.samples.len(), FALLBACK_SAMPLES);
        assert!(flat.samples.iter().all(|&s| s == 30.0));
        assert!(fallback_dist(-1.0, 0.5, 1).is_err());
        assert!(fallback_dist(1.0, -0.5, 1).is_err());
    }

    #[test]
    fn fallback_matches_requested_moments() {
        // Moment-matching oracle: a lognormal with sigma^2 = ln(1 + cv^2) and
        // mu = ln(mean) - sigma^2 / 2 has exactly the requested mean and CV.
        let (mean, cv) = (30.0_f64, 0.5_f64);
        let s2 = (1.0 + cv * cv).ln();
        let mu = mean.ln() - s2 / 2.0;
        let analytic_mean = (mu + s2 / 2.0).exp();
        let analytic_cv = (s2.exp() - 1.0).sqrt();
        assert!((analytic_mean - mean).abs() < 1e-9);
        assert!((analytic_cv - cv).abs() < 1e-12);

        let d = fallback_dist(mean, cv, 77).unwrap();
        let n = d.samples.len() as f64;
        let m = d.samples.iter().sum::<f64>() / n;
        let var = d.samples.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1.0);
        let sample_cv = var.sqrt() / m;
        assert!((m - mean).abs() / mean < 0.05, "mean {m}");
        assert!((sample_cv - cv).abs() / cv < 0.15, "cv {sample_cv}");
    }

    #[test]
    fn default_calendar_partitions_the_day() {
        let cal = ShiftCalendar::default();
        cal.validate().unwrap();
        let total: u32 = Shift::ALL.iter().map(|&s| cal.duration(s)).sum();
        assert_eq!(total, MINUTES_PER_DAY);
        assert_eq!(cal.duration(Shift::Night), 480);
        assert_eq!(cal.window(0, Shift::Day), (0.0, 480.0));
        assert_eq!(
            cal.window(2, Shift::Night),
            (2.0 * 1440.0 + 960.0, 3.0 * 1440.0)
        );
        assert_eq!(cal.shift_at_clock(23.0 * 60.0 + 30.0), Shift::Night);
        assert_eq!(cal.shift_at_clock(3.0 * 60.0), Shift::Night);
        assert_eq!(cal.shift_at_clock(7.0 * 60.0), Shift::Day);
        assert_eq!(cal.shift_at_sim(480.0), Shift::Evening);
        assert_eq!(cal.next_boundary_after(0.0), (480.0, Shift::Evening));
        assert_eq!(cal.next_boundary_after(1000.0), (1440.0, Shift::Day));
    }

    #[test]
    fn misordered_calendar_rejected() {
        assert!(ShiftCalendar::new(900, 420, 1380).is_err());
        assert!(ShiftCalendar::new(420, 420, 1380).is_err());
        assert!(ShiftCalendar::new(420, 900, 1500).is_err());
        assert!(ShiftCalendar::new(0, 600, 1200).is_ok());
    }

    #[test]
    fn capacity_rounds_ties_up() {
        assert_eq!(Scenario::capacity(2.5), 3);
        assert_eq!(Scenario::capacity(2.49), 2);
        assert_eq!(Scenario::capacity(0.0), 0);
    }

    #[test]
    fn scenario_validation() {
        let mut s = Scenario::new(FeatureVector::default());
        s.validate().unwrap();
        s.warmup_days = s.horizon_days;
        assert!(s.validate().is_err());
        s.warmup_days = 0;
        s.replications = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn raw_row_round_trip() {
        let mut fields = ["1.5"; 13];
        fields[12] = "7";
        let mut r = raw(fields);
        r.actual_btt = "88.25".into();
        let rec = DailyRecord::from_raw(&r).unwrap();
        assert_eq!(rec.actual_btt, Some(88.25));
        assert_eq!(DailyRecord::from_raw(&rec.to_raw()).unwrap(), rec);
        r.date = "11/04/2021".into();
        assert!(DailyRecord::from_raw(&r).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn feature_vector_index_and_named_views_agree(values in proptest::array::uniform13(0.0f64..1e6)) {
                let fv = FeatureVector::from_array(values);
                prop_assert_eq!(fv.to_array(), values);
                let json = serde_json::to_string(&fv).unwrap();
                let back: FeatureVector = serde_json::from_str(&json).unwrap();
                prop_assert_eq!(back, fv);
                for s in Shift::ALL {
                    prop_assert_eq!(fv.discharges(s), values[s.index()]);
                    prop_assert_eq!(fv.evs(s), values[6 + s.index()]);
                }
            }

            #[test]
            fn valid_calendars_sum_to_a_day(a in 0u32..1440, b in 1u32..1438, c in 1u32..1438) {
                prop_assume!(b + c < 1440);
                let cal = ShiftCalendar { day_start: a, evening_start: (a + b) % 1440, night_start: (a + b + c) % 1440 };
                prop_assert!(cal.validate().is_ok());
                let total: u32 = Shift::ALL.iter().map(|&s| cal.duration(s)).sum();
                prop_assert_eq!(total, 1440);
            }
        }
    }
}
