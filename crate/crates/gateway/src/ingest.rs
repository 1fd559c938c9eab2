//! CSV loading for the daily dataset and the feature tables used by the
//! training and attribution commands.
//!
//! The daily file must carry [`CSV_HEADER`] exactly (same names, same
//! order). A file is accepted only if every row parses; otherwise all
//! offending lines are reported together.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use bedtwin_core::domain::{
    DailyRecord, FeatureVector, RawDailyRow, CSV_HEADER, FEATURE_COUNT, FEATURE_NAMES,
};
use bedtwin_core::sim::SweepRow;
use serde::Serialize;
use thiserror::Error;

/// Header of synthetic sweep tables: the features, then simulated mean and SD.
pub fn sweep_header() -> Vec<&'static str> {
    FEATURE_NAMES
        .iter()
        .copied()
        .chain(["mean_btt", "sd_btt"])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },
    #[error("{} invalid row(s): {}", .0.len(), join_rows(.0))]
    Rows(Vec<RowError>),
    #[error("empty file: no header")]
    Empty,
}

fn join_rows(rows: &[RowError]) -> String {
    rows.iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input)
}

fn header_of<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<String>> {
    let headers = rdr.headers().map_err(|e| {
        IngestError::Rows(vec![RowError {
            line: 1,
            message: e.to_string(),
        }])
    })?;
    if headers.is_empty() {
        return Err(IngestError::Empty);
    }
    Ok(headers.iter().map(str::to_string).collect())
}

fn check_header(found: &[String], expected: &[&str]) -> Result<()> {
    if found
        .iter()
        .map(String::as_str)
        .eq(expected.iter().copied())
    {
        Ok(())
    } else {
        Err(IngestError::HeaderMismatch {
            expected: expected.join(","),
            found: found.join(","),
        })
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a daily dataset file.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Vec<DailyRecord>> {
    parse_csv(open(path.as_ref())?)
}

pub fn parse_csv<R: Read>(input: R) -> Result<Vec<DailyRecord>> {
    let mut rdr = reader(input);
    check_header(&header_of(&mut rdr)?, &CSV_HEADER)?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut seen: HashMap<(String, chrono::NaiveDate), u64> = HashMap::new();
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != CSV_HEADER.len() {
            errors.push(RowError {
                line,
                message: format!("expected {} fields, found {}", CSV_HEADER.len(), row.len()),
            });
            continue;
        }
        let raw: RawDailyRow = match row.deserialize(None) {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match DailyRecord::from_raw(&raw) {
            Ok(rec) => {
                let key = (rec.facility_id.clone(), rec.date);
                if let Some(first) = seen.insert(key, line) {
                    errors.push(RowError {
                        line,
                        message: format!(
                            "duplicate facility/date {}/{} (first on line {first})",
                            rec.facility_id, rec.date
                        ),
                    });
                } else {
                    records.push(rec);
                }
            }
            Err(e) => errors.push(RowError {
                line,
                message: e.to_string(),
            }),
        }
    }
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(IngestError::Rows(errors))
    }
}

pub fn write_csv<W: Write>(records: &[DailyRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r.to_raw())?;
    }
    if records.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(sweep_header())?;
    for r in rows {
        let mut fields: Vec<String> = r
            .features
            .to_array()
            .iter()
            .map(|v| v.to_string())
            .collect();
        fields.push(r.result.mean_btt.map(|v| v.to_string()).unwrap_or_default());
        fields.push(r.result.sd_btt.to_string());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

/// Feature rows with an optional target, read from any of the supported
/// layouts: the daily dataset (target `actual_btt`), a sweep table (target
/// `mean_btt`) or a bare table of the 13 features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub features: Vec<FeatureVector>,
    pub targets: Vec<Option<f64>>,
    /// 1-based file line of each row.
    pub lines: Vec<u64>,
}

impl FeatureTable {
    /// Rows that carry a target, as training inputs.
    pub fn labelled(&self) -> (Vec<FeatureVector>, Vec<f64>) {
        self.features
            .iter()
            .zip(&self.targets)
            .filter_map(|(f, t)| t.map(|t| (*f, t)))
            .unzip()
    }
}

pub fn read_feature_table(path: impl AsRef<Path>) -> Result<FeatureTable> {
    parse_feature_table(open(path.as_ref())?)
}

pub fn parse_feature_table<R: Read>(input: R) -> Result<FeatureTable> {
    let mut buf = Vec::new();
    let mut input = input;
    input
        .read_to_end(&mut buf)
        .map_err(|source| IngestError::Io {
            path: "<input>".into(),
            source,
        })?;
    let header = header_of(&mut reader(buf.as_slice()))?;
    if header
        .iter()
        .map(String::as_str)
        .eq(CSV_HEADER.iter().copied())
    {
        let records = parse_csv(buf.as_slice())?;
        return Ok(FeatureTable {
            lines: (2..).take(records.len()).collect(),
            targets: records.iter().map(|r| r.actual_btt).collect(),
            features: records.into_iter().map(|r| r.features).collect(),
        });
    }
    let sweep = sweep_header();
    let target_col = if header.iter().map(String::as_str).eq(sweep.iter().copied()) {
        Some(FEATURE_COUNT)
    } else {
        check_header(&header, &FEATURE_NAMES)?;
        None
    };

    let mut table = FeatureTable {
        features: Vec::new(),
        targets: Vec::new(),
        lines: Vec::new(),
    };
    let mut errors = Vec::new();
    for row in reader(buf.as_slice()).records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    line: e.position().map(|p| p.line()).unwrap_or(0),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != header.len() {
            errors.push(RowError {
                line,
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, String> = (0..FEATURE_COUNT)
            .map(|i| {
                row[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| format!("{}: `{}` is not a number", FEATURE_NAMES[i], &row[i]))
            })
            .collect();
        let features = parsed.and_then(|v| {
            let f = FeatureVector::from_slice(&v).map_err(|e| e.to_string())?;
            f.validate().map_err(|e| e.to_string())?;
            Ok(f)
        });
        let target = match target_col.map(|c| row[c].trim()) {
            None | Some("") => Ok(None),
            Some(t) => t
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| format!("mean_btt: `{t}` is not a number")),
        };
        match (features, target) {
            (Ok(f), Ok(t)) => {
                table.features.push(f);
                table.targets.push(t);
                table.lines.push(line);
            }
            (Err(message), _) | (_, Err(message)) => errors.push(RowError { line, message }),
        }
    }
    if errors.is_empty() {
        Ok(table)
    } else {
        Err(IngestError::Rows(errors))
    }
}
