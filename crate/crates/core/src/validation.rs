//! Validation metrics: MAE, k-sigma coverage of simulated BTT, error
//! distributions and per-facility reports laid out like a facility table
//! (`Facility | MAE_ML | MAE_Sim | Sim_1SD | Sim_2SD`).
//!
//! Errors are always `actual - predicted`, so negative errors mean the
//! model over-predicts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DailyRecord, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
use crate::gbm::GbmModel;

pub const DEFAULT_OUTLIER_THRESHOLD: f64 = -60.0;
pub const DEFAULT_HISTOGRAM_BINS: usize = 30;
pub const ALL_FACILITIES: &str = "All";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no observations")]
    Empty,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("negative simulated sd at index {0}")]
    NegativeSd(usize),
    #[error("record {facility}/{date} has no actual BTT")]
    MissingActual { facility: String, date: String },
    #[error("model prediction failed: {0}")]
    Model(String),
    #[error("simulation failed for {facility}/{date}: {message}")]
    Simulation {
        facility: String,
        date: String,
        message: String,
    },
}

pub type Result<T, E = ValidationError> = std::result::Result<T, E>;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(ValidationError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(ValidationError::Empty);
    }
    if let Some(i) = a
        .iter()
        .zip(b)
        .position(|(x, y)| !x.is_finite() || !y.is_finite())
    {
        return Err(ValidationError::NonFinite(i));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    Ok(actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p).abs())
        .sum::<f64>()
        / actual.len() as f64)
}

/// Fraction of observations with `|actual - mean| <= k * sd`.
pub fn coverage(actual: &[f64], sim_mean: &[f64], sim_sd: &[f64], k: f64) -> Result<f64> {
    check_pair(actual, sim_mean)?;
    check_pair(actual, sim_sd)?;
    if let Some(i) = sim_sd.iter().position(|&s| s < 0.0) {
        return Err(ValidationError::NegativeSd(i));
    }
    let covered = actual
        .iter()
        .zip(sim_mean)
        .zip(sim_sd)
        .filter(|((a, m), s)| (*a - *m).abs() <= k * **s)
        .count();
    Ok(covered as f64 / actual.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` equal-width edges from min to max error.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return Histogram {
            edges: vec![0.0; bins + 1],
            counts: vec![0; bins],
        };
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub errors: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator; 0 for one error).
    pub sd: f64,
    /// Standardized third central moment; `None` when n < 3 or all errors
    /// are equal.
    pub skewness: Option<f64>,
    pub histogram: Histogram,
}

pub fn error_stats(actual: &[f64], predicted: &[f64]) -> Result<ErrorStats> {
    error_stats_with_bins(actual, predicted, DEFAULT_HISTOGRAM_BINS)
}

pub fn error_stats_with_bins(actual: &[f64], predicted: &[f64], bins: usize) -> Result<ErrorStats> {
    check_pair(actual, predicted)?;
    let errors: Vec<f64> = actual.iter().zip(predicted).map(|(a, p)| a - p).collect();
    Ok(stats_of_errors(errors, bins))
}

pub fn stats_of_errors(errors: Vec<f64>, bins: usize) -> ErrorStats {
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let m2 = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let m3 = errors.iter().map(|e| (e - mean).powi(3)).sum::<f64>() / n;
    let sd = if errors.len() > 1 {
        (m2 * n / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let skewness = (errors.len() >= 3 && m2 > 0.0).then(|| m3 / m2.powf(1.5));
    ErrorStats {
        histogram: histogram(&errors, bins),
        errors,
        mean,
        sd,
        skewness,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierFlag {
    NoOutliers,
    NoComparisonRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierAnalysis {
    pub threshold: f64,
    pub outlier_rows: Vec<usize>,
    pub n_outliers: usize,
    pub n_rest: usize,
    pub outlier_means: Option<Vec<f64>>,
    pub rest_means: Option<Vec<f64>>,
    /// Outlier mean minus rest mean, per feature.
    pub mean_difference: Option<Vec<f64>>,
    pub flag: Option<OutlierFlag>,
}

impl OutlierAnalysis {
    pub fn difference_for(&self, feature: &str) -> Option<f64> {
        let idx = FEATURE_NAMES.iter().position(|n| *n == feature)?;
        self.mean_difference.as_ref().map(|d| d[idx])
    }
}

/// Splits rows by `error < threshold` and compares feature means of the
/// two groups.
pub fn outlier_analysis(
    errors: &[f64],
    features: &[FeatureVector],
    threshold: f64,
) -> Result<OutlierAnalysis> {
    if errors.len() != features.len() {
        return Err(ValidationError::LengthMismatch(
            errors.len(),
            features.len(),
        ));
    }
    if errors.is_empty() {
        return Err(ValidationError::Empty);
    }
    let outlier_rows: Vec<usize> = (0..errors.len())
        .filter(|&i| errors[i] < threshold)
        .collect();
    let rest: Vec<usize> = (0..errors.len())
        .filter(|&i| errors[i] >= threshold)
        .collect();
    let means = |rows: &[usize]| -> Option<Vec<f64>> {
        if rows.is_empty() {
            return None;
        }
        let mut m = vec![0.0; FEATURE_COUNT];
        for &r in rows {
            for (acc, v) in m.iter_mut().zip(features[r].to_array()) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= rows.len() as f64);
        Some(m)
    };
    let outlier_means = means(&outlier_rows);
    let rest_means = means(&rest);
    let flag = if outlier_rows.is_empty() {
        Some(OutlierFlag::NoOutliers)
    } else if rest.is_empty() {
        Some(OutlierFlag::NoComparisonRows)
    } else {
        None
    };
    let mean_difference = match (&outlier_means, &rest_means) {
        (Some(o), Some(r)) => Some(o.iter().zip(r).map(|(a, b)| a - b).collect()),
        _ => None,
    };
    Ok(OutlierAnalysis {
        threshold,
        n_outliers: outlier_rows.len(),
        n_rest: rest.len(),
        outlier_rows,
        outlier_means,
        rest_means,
        mean_difference,
        flag,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub facility_id: String,
    pub mae_ml: f64,
    pub mae_sim: Option<f64>,
    pub coverage_1sd: Option<f64>,
    pub coverage_2sd: Option<f64>,
    pub n_days: usize,
    /// Fewer than two records behind the row.
    pub low_n: bool,
}

/// Simulated (mean, sd) BTT for a day's inputs.
pub type SimRunner<'a> =
    dyn Fn(&FeatureVector) -> std::result::Result<(f64, f64), String> + Sync + 'a;

#[derive(Clone)]
struct Scored {
    facility: String,
    actual: f64,
    ml: f64,
    sim: Option<(f64, f64)>,
}

fn row_for(facility: &str, rows: &[&Scored], k: [f64; 2]) -> Result<ValidationRow> {
    let actual: Vec<f64> = rows.iter().map(|r| r.actual).collect();
    let ml: Vec<f64> = rows.iter().map(|r| r.ml).collect();
    let (mae_sim, c1, c2) = if rows.iter().all(|r| r.sim.is_some()) {
        let mean: Vec<f64> = rows.iter().map(|r| r.sim.unwrap().0).collect();
        let sd: Vec<f64> = rows.iter().map(|r| r.sim.unwrap().1).collect();
        (
            Some(mae(&actual, &mean)?),
            Some(coverage(&actual, &mean, &sd, k[0])?),
            Some(coverage(&actual, &mean, &sd, k[1])?),
        )
    } else {
        (None, None, None)
    };
    Ok(ValidationRow {
        facility_id: facility.to_string(),
        mae_ml: mae(&actual, &ml)?,
        mae_sim,
        coverage_1sd: c1,
        coverage_2sd: c2,
        n_days: rows.len(),
        low_n: rows.len() < 2,
    })
}

/// Builds the "All" row (every record pooled) followed by one row per
/// facility in facility-id order. Without a simulation runner the
/// simulation columns are left empty.
pub fn build_report(
    records: &[DailyRecord],
    ml_model: &GbmModel,
    sim_runner: Option<&SimRunner<'_>>,
) -> Result<Vec<ValidationRow>> {
    build_report_with_k(records, ml_model, sim_runner, [1.0, 2.0])
}

pub fn build_report_with_k(
    records: &[DailyRecord],
    ml_model: &GbmModel,
    sim_runner: Option<&SimRunner<'_>>,
    k: [f64; 2],
) -> Result<Vec<ValidationRow>> {
    let (_, scored) = score(records, ml_model, sim_runner)?;
    rows_from(&scored, k)
}

/// Records in canonical (facility, date) order, scored once.
fn score<'r>(
    records: &'r [DailyRecord],
    ml_model: &GbmModel,
    sim_runner: Option<&SimRunner<'_>>,
) -> Result<(Vec<&'r DailyRecord>, Vec<Scored>)> {
    if records.is_empty() {
        return Err(ValidationError::Empty);
    }
    let mut sorted: Vec<&DailyRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.facility_id.cmp(&b.facility_id).then(a.date.cmp(&b.date)));

    let scored: Vec<Scored> = sorted
        .par_iter()
        .map(|r| {
            let actual = r.actual_btt.ok_or_else(|| ValidationError::MissingActual {
                facility: r.facility_id.clone(),
                date: r.date.to_string(),
            })?;
            let ml = ml_model
                .predict_features(&r.features)
                .map_err(|e| ValidationError::Model(e.to_string()))?;
            let sim = match sim_runner {
                Some(run) => {
                    Some(
                        run(&r.features).map_err(|message| ValidationError::Simulation {
                            facility: r.facility_id.clone(),
                            date: r.date.to_string(),
                            message,
                        })?,
                    )
                }
                None => None,
            };
            Ok(Scored {
                facility: r.facility_id.clone(),
                actual,
                ml,
                sim,
            })
        })
        .collect::<Result<_>>()?;
    Ok((sorted, scored))
}

fn rows_from(scored: &[Scored], k: [f64; 2]) -> Result<Vec<ValidationRow>> {
    let mut by_facility: BTreeMap<&str, Vec<&Scored>> = BTreeMap::new();
    for s in scored {
        by_facility.entry(&s.facility).or_default().push(s);
    }
    let all: Vec<&Scored> = scored.iter().collect();
    let mut rows = vec![row_for(ALL_FACILITIES, &all, k)?];
    for (facility, group) in by_facility {
        rows.push(row_for(facility, &group, k)?);
    }
    Ok(rows)
}

/// Facility table plus error distributions and the outlier comparison.
/// Outliers are taken from simulation errors when a runner is given,
/// otherwise from model errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    pub ml_errors: ErrorStats,
    pub sim_errors: Option<ErrorStats>,
    pub outliers: OutlierAnalysis,
}

pub fn validation_report(
    records: &[DailyRecord],
    ml_model: &GbmModel,
    sim_runner: Option<&SimRunner<'_>>,
    outlier_threshold: f64,
) -> Result<ValidationReport> {
    let (sorted, scored) = score(records, ml_model, sim_runner)?;
    let rows = rows_from(&scored, [1.0, 2.0])?;
    let ml_errors = stats_of_errors(
        scored.iter().map(|s| s.actual - s.ml).collect(),
        DEFAULT_HISTOGRAM_BINS,
    );
    let sim_errors = sim_runner.map(|_| {
        stats_of_errors(
            scored
                .iter()
                .map(|s| s.actual - s.sim.map_or(f64::NAN, |m| m.0))
                .collect(),
            DEFAULT_HISTOGRAM_BINS,
        )
    });
    let features: Vec<FeatureVector> = sorted.iter().map(|r| r.features).collect();
    let errors = &sim_errors.as_ref().unwrap_or(&ml_errors).errors;
    let outliers = outlier_analysis(errors, &features, outlier_threshold)?;
    Ok(ValidationReport {
        rows,
        ml_errors,
        sim_errors,
        outliers,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}"))
        .unwrap_or_else(|| "-".to_string())
}

/// Aligned text table: one header line and one line per row. Low-n rows
/// carry a trailing `*`.
pub fn render_table(rows: &[ValidationRow]) -> String {
    let name_width = rows
        .iter()
        .map(|r| r.facility_id.len())
        .chain(std::iter::once("Facility".len()))
        .max()
        .unwrap_or(8);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_width$}  {:>8}  {:>8}  {:>8}  {:>8}",
        "Facility", "MAE_ML", "MAE_Sim", "Sim_1SD", "Sim_2SD"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<name_width$}  {:>8}  {:>8}  {:>8}  {:>8}{}",
            r.facility_id,
            cell(Some(r.mae_ml)),
            cell(r.mae_sim),
            cell(r.coverage_1sd),
            cell(r.coverage_2sd),
            if r.low_n { " *" } else { "" }
        );
    }
    if rows.iter().any(|r| r.low_n) {
        out.push_str("* fewer than 2 days of data\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    #[test]
    fn mae_fixtures() {
        assert_eq!(mae(&[0.0, 0.0], &[2.0, -2.0]).unwrap(), 2.0);
        assert_eq!(mae(&[3.0, 4.5], &[3.0, 4.5]).unwrap(), 0.0);
        assert_eq!(
            mae(&[1.0], &[1.0, 2.0]),
            Err(ValidationError::LengthMismatch(1, 2))
        );
        assert_eq!(mae(&[], &[]), Err(ValidationError::Empty));
    }

    #[test]
    fn coverage_fixtures() {
        assert_eq!(coverage(&[10.0], &[10.0], &[1.0], 1.0).unwrap(), 1.0);
        assert_eq!(coverage(&[13.0], &[10.0], &[1.0], 2.0).unwrap(), 0.0);
        // Boundary counts as covered.
        assert_eq!(coverage(&[12.0], &[10.0], &[1.0], 2.0).unwrap(), 1.0);
        assert_eq!(
            coverage(&[10.0, 11.0], &[10.0, 10.0], &[1.0, 1.0], 0.0).unwrap(),
            0.5
        );
        assert!(coverage(&[1.0], &[1.0], &[-1.0], 1.0).is_err());
    }

    #[test]
    fn skewness_fixtures() {
        let s = error_stats(&[-1.0, 0.0, 1.0], &[0.0; 3]).unwrap();
        assert_eq!(s.skewness, Some(0.0));
        let s = error_stats(&[0.0, 0.0, 0.0, -10.0], &[0.0; 4]).unwrap();
        assert_eq!(s.mean, -2.5);
        // m2 = 18.75, m3 = -93.75 → g1 = -93.75 / 18.75^1.5
        let expected = -93.75 / 18.75_f64.powf(1.5);
        assert!((s.skewness.unwrap() - expected).abs() < 1e-12);
        assert!(s.skewness.unwrap() < 0.0);
        assert_eq!(
            error_stats(&[1.0, 2.0], &[0.0, 0.0]).unwrap().skewness,
            None
        );
    }

    #[test]
    fn histogram_counts_everything() {
        let s = error_stats(&(0..100).map(f64::from).collect::<Vec<_>>(), &[0.0; 100]).unwrap();
        assert_eq!(s.histogram.counts.len(), 30);
        assert_eq!(s.histogram.edges.len(), 31);
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), 100);
        assert_eq!(s.histogram.edges[0], 0.0);
        assert_eq!(s.histogram.edges[30], 99.0);
        let flat = histogram(&[2.0, 2.0], 5);
        assert_eq!(flat.counts, vec![2, 0, 0, 0, 0]);
    }

    fn fv_with_evs(evs: f64) -> FeatureVector {
        FeatureVector {
            day_evs: evs,
            eve_evs: 3.0,
            ..FeatureVector::default()
        }
    }

    #[test]
    fn outlier_group_has_fewer_evs() {
        let errors = vec![-80.0, -75.0, 5.0, 10.0, -20.0, -61.0];
        let feats: Vec<FeatureVector> = errors
            .iter()
            .map(|&e| fv_with_evs(if e < -60.0 { 1.0 } else { 5.0 }))
            .collect();
        let a = outlier_analysis(&errors, &feats, DEFAULT_OUTLIER_THRESHOLD).unwrap();
        assert_eq!(a.outlier_rows, vec![0, 1, 5]);
        assert_eq!(a.difference_for("day_evs"), Some(-4.0));
        assert_eq!(a.difference_for("eve_evs"), Some(0.0));
        assert_eq!(a.flag, None);
    }

    #[test]
    fn outlier_flags() {
        let feats = vec![fv_with_evs(1.0); 3];
        let none = outlier_analysis(&[1.0, 2.0, 3.0], &feats, 0.5).unwrap();
        assert_eq!(none.flag, Some(OutlierFlag::NoOutliers));
        assert!(none.mean_difference.is_none());
        let all = outlier_analysis(&[-100.0, -90.0, -70.0], &feats, -60.0).unwrap();
        assert_eq!(all.flag, Some(OutlierFlag::NoComparisonRows));
        assert!(all.mean_difference.is_none());
        assert!(all.outlier_means.is_some());
    }

    fn rec(fac: &str, day: u32, actual: f64) -> DailyRecord {
        DailyRecord {
            facility_id: fac.into(),
            date: NaiveDate::from_ymd_opt(2021, 5, day).unwrap(),
            features: FeatureVector::from_array([actual; 13]),
            actual_btt: Some(actual),
        }
    }

    #[test]
    fn perfect_predictors_score_zero() {
        // A single-split tree on feature 0 reproduces actual exactly here.
        let records = vec![rec("F1", 1, 40.0), rec("F1", 2, 40.0), rec("F1", 3, 40.0)];
        let model = GbmModel::constant(13, 40.0, 0.1);
        let sim = |f: &FeatureVector| Ok((f.day_discharges, 2.0));
        let rows = build_report(&records, &model, Some(&sim)).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r.mae_ml, 0.0);
            assert_eq!(r.mae_sim, Some(0.0));
            assert_eq!(r.coverage_1sd, Some(1.0));
            assert_eq!(r.coverage_2sd, Some(1.0));
        }
    }

    #[test]
    fn all_row_pools_records() {
        let records = vec![
            rec("A", 1, 10.0),
            rec("B", 1, 30.0),
            rec("B", 2, 30.0),
            rec("B", 3, 30.0),
        ];
        let model = GbmModel::constant(13, 20.0, 0.1);
        let rows = build_report(&records, &model, None).unwrap();
        assert_eq!(rows[0].facility_id, "All");
        assert_eq!(rows[1].mae_ml, 10.0);
        assert!(rows[1].low_n);
        assert_eq!(rows[2].mae_ml, 10.0);
        assert_eq!(rows[0].mae_ml, 10.0);
        let skewed = vec![
            rec("A", 1, 10.0),
            rec("B", 1, 26.0),
            rec("B", 2, 26.0),
            rec("B", 3, 26.0),
        ];
        let rows = build_report(&skewed, &model, None).unwrap();
        // Pooled: (10 + 6 + 6 + 6) / 4 = 7, not the facility average (10 + 6) / 2 = 8.
        assert_eq!(rows[0].mae_ml, 7.0);
        assert_eq!(rows[0].mae_sim, None);
    }

    #[test]
    fn report_bundles_errors_and_outliers() {
        let records = vec![rec("A", 1, 10.0), rec("A", 2, 100.0), rec("B", 1, 30.0)];
        let model = GbmModel::constant(13, 120.0, 0.1);
        let r = validation_report(&records, &model, None, DEFAULT_OUTLIER_THRESHOLD).unwrap();
        assert_eq!(r.ml_errors.errors, vec![-110.0, -20.0, -90.0]);
        assert_eq!(r.outliers.outlier_rows, vec![0, 2]);
        assert!(r.sim_errors.is_none());
        let sim = |f: &FeatureVector| Ok((f.day_discharges + 1.0, 1.0));
        let r = validation_report(&records, &model, Some(&sim), DEFAULT_OUTLIER_THRESHOLD).unwrap();
        assert_eq!(r.sim_errors.unwrap().errors, vec![-1.0; 3]);
        assert_eq!(r.outliers.flag, Some(OutlierFlag::NoOutliers));
    }

    #[test]
    fn missing_actual_is_rejected() {
        let mut r = rec("A", 1, 10.0);
        r.actual_btt = None;
        let model = GbmModel::constant(13, 20.0, 0.1);
        assert!(matches!(
            build_report(&[r], &model, None),
            Err(ValidationError::MissingActual { .. })
        ));
    }

    #[test]
    fn table_layout() {
        let rows = vec![ValidationRow {
            facility_id: "All".into(),
            mae_ml: 31.99,
            mae_sim: Some(20.87),
            coverage_1sd: Some(0.97),
            coverage_2sd: Some(0.99),
            n_days: 10,
            low_n: false,
        }];
        assert_eq!(
            render_table(&rows),
            "Facility    MAE_ML   MAE_Sim   Sim_1SD   Sim_2SD\nAll          31.99     20.87      0.97      0.99\n"
        );
    }

    proptest! {
        #[test]
        fn mae_is_symmetric_and_non_negative(pairs in proptest::collection::vec((-1e4f64..1e4, -1e4f64..1e4), 1..50)) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = mae(&a, &p).unwrap();
            prop_assert!(m >= 0.0);
            prop_assert_eq!(m, mae(&p, &a).unwrap());
            prop_assert_eq!(mae(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(m == 0.0, a == p);
        }

        #[test]
        fn coverage_grows_with_k(rows in proptest::collection::vec((-100f64..100.0, -100f64..100.0, 0f64..30.0), 1..60), k in 0f64..3.0, dk in 0f64..3.0) {
            let a: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let m: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let s: Vec<f64> = rows.iter().map(|r| r.2).collect();
            prop_assert!(coverage(&a, &m, &s, k + dk).unwrap() >= coverage(&a, &m, &s, k).unwrap());
        }

        #[test]
        fn mean_error_is_difference_of_means(pairs in proptest::collection::vec((0f64..500.0, 0f64..500.0), 1..80)) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let s = error_stats(&a, &p).unwrap();
            let n = a.len() as f64;
            let diff = a.iter().sum::<f64>() / n - p.iter().sum::<f64>() / n;
            prop_assert!((s.mean - diff).abs() <= 1e-9 * (1.0 + diff.abs()));
        }
    }
}
