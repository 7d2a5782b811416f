//! Parsing and validation of Backblaze-format daily snapshot CSV files.
//!
//! Each file carries one row per drive per day: `date, serial_number, model,
//! capacity_bytes, failure`, followed by sparse `smart_<id>_raw` /
//! `smart_<id>_normalized` columns. Parsing is streaming; rows are validated
//! individually and bad rows are collected rather than aborting the whole file
//! (up to a configurable tolerance).

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Whether a SMART column carries the vendor raw value or the normalized
/// (1..=253) health value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmartKind {
    Raw,
    Normalized,
}

impl fmt::Display for SmartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmartKind::Raw => write!(f, "raw"),
            SmartKind::Normalized => write!(f, "normalized"),
        }
    }
}

/// Identifies one SMART column: attribute id plus raw/normalized kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SmartKey {
    pub id: u16,
    pub kind: SmartKind,
}

impl SmartKey {
    pub fn raw(id: u16) -> Self {
        SmartKey { id, kind: SmartKind::Raw }
    }

    pub fn normalized(id: u16) -> Self {
        SmartKey { id, kind: SmartKind::Normalized }
    }

    /// Column name in the Backblaze CSV schema, e.g. `smart_5_raw`.
    pub fn column_name(&self) -> String {
        format!("smart_{}_{}", self.id, self.kind)
    }

    /// Inverse of [`column_name`](Self::column_name).
    pub fn from_column_name(name: &str) -> Option<Self> {
        let rest = name.strip_prefix("smart_")?;
        let (id_str, kind_str) = rest.split_once('_')?;
        let id: u16 = id_str.parse().ok()?;
        if id == 0 {
            return None;
        }
        let kind = match kind_str {
            "raw" => SmartKind::Raw,
            "normalized" => SmartKind::Normalized,
            _ => return None,
        };
        Some(SmartKey { id, kind })
    }
}

/// One drive-day telemetry row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveDaySnapshot {
    pub date: NaiveDate,
    pub serial: String,
    pub model: String,
    /// `None` when the column was empty or carried the `-1` sentinel.
    pub capacity_bytes: Option<u64>,
    /// True when the drive was reported failed/removed on this day.
    pub failed: bool,
    /// Sparse SMART values; absent keys mean the cell was empty.
    pub smart: BTreeMap<SmartKey, f64>,
}

/// Column layout of a validated snapshot file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaMap {
    pub date: usize,
    pub serial: usize,
    pub model: usize,
    pub capacity: usize,
    pub failure: usize,
    /// (column index, key) per recognized SMART column.
    pub smart_columns: Vec<(usize, SmartKey)>,
    /// Column names that matched no recognized pattern; reported, not fatal.
    pub unrecognized: Vec<String>,
    pub n_columns: usize,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing mandatory column: {0}")]
    MissingColumn(String),
    #[error("duplicate column: {0}")]
    DuplicateColumn(String),
    #[error("too many bad rows: {bad} of {total} exceeds tolerance {tolerance}")]
    TooManyBadRows { bad: usize, total: usize, tolerance: f64 },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Why a single row was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowErrorCause {
    BadDate(String),
    BadNumber { column: String, value: String },
    NormalizedOutOfRange { column: String, value: String },
    NegativeRawValue { column: String, value: String },
    BadFailureFlag(String),
    EmptySerial,
    FieldCount { expected: usize, got: usize },
    Malformed(String),
}

impl fmt::Display for RowErrorCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowErrorCause::BadDate(v) => write!(f, "unparseable date {v:?}"),
            RowErrorCause::BadNumber { column, value } => {
                write!(f, "unparseable number {value:?} in column {column}")
            }
            RowErrorCause::NormalizedOutOfRange { column, value } => {
                write!(f, "normalized value {value} outside [1, 253] in column {column}")
            }
            RowErrorCause::NegativeRawValue { column, value } => {
                write!(f, "negative raw value {value} in column {column}")
            }
            RowErrorCause::BadFailureFlag(v) => write!(f, "failure flag {v:?} is not 0 or 1"),
            RowErrorCause::EmptySerial => write!(f, "empty serial_number"),
            RowErrorCause::FieldCount { expected, got } => {
                write!(f, "expected {expected} fields, got {got}")
            }
            RowErrorCause::Malformed(msg) => write!(f, "{msg}"),
        }
    }
}

/// A rejected row: 1-based line number plus cause.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {cause}")]
pub struct RowError {
    pub line: u64,
    pub cause: RowErrorCause,
}

/// Validate a header row and derive the column layout.
pub fn validate_header<S: AsRef<str>>(header: &[S]) -> Result<SchemaMap, IngestError> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for col in header {
        let name = col.as_ref();
        let count = seen.entry(name).or_insert(0);
        *count += 1;
        if *count > 1 {
            return Err(IngestError::DuplicateColumn(name.to_string()));
        }
    }

    let find = |name: &str| -> Result<usize, IngestError> {
        header
            .iter()
            .position(|c| c.as_ref() == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };

    let date = find("date")?;
    let serial = find("serial_number")?;
    let model = find("model")?;
    let capacity = find("capacity_bytes")?;
    let failure = find("failure")?;

    let mut smart_columns = Vec::new();
    let mut unrecognized = Vec::new();
    let mandatory = [date, serial, model, capacity, failure];
    for (i, col) in header.iter().enumerate() {
        if mandatory.contains(&i) {
            continue;
        }
        let name = col.as_ref();
        match SmartKey::from_column_name(name) {
            Some(key) => smart_columns.push((i, key)),
            None => unrecognized.push(name.to_string()),
        }
    }

    Ok(SchemaMap {
        date,
        serial,
        model,
        capacity,
        failure,
        smart_columns,
        unrecognized,
        n_columns: header.len(),
    })
}

/// Parse one CSV record into a snapshot. `line` is the 1-based line number
/// used in diagnostics.
pub fn parse_row(
    record: &csv::StringRecord,
    schema: &SchemaMap,
    line: u64,
) -> Result<DriveDaySnapshot, RowError> {
    let err = |cause| RowError { line, cause };

    if record.len() != schema.n_columns {
        return Err(err(RowErrorCause::FieldCount {
            expected: schema.n_columns,
            got: record.len(),
        }));
    }
    let field = |i: usize| record.get(i).unwrap_or("").trim();

    let date_str = field(schema.date);
    let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d")
        .map_err(|_| err(RowErrorCause::BadDate(date_str.to_string())))?;

    let serial = field(schema.serial);
    if serial.is_empty() {
        return Err(err(RowErrorCause::EmptySerial));
    }
    let model = field(schema.model).to_string();

    let cap_str = field(schema.capacity);
    let capacity_bytes = if cap_str.is_empty() || cap_str == "-1" {
        None
    } else {
        Some(cap_str.parse::<u64>().map_err(|_| {
            err(RowErrorCause::BadNumber {
                column: "capacity_bytes".into(),
                value: cap_str.to_string(),
            })
        })?)
    };

    let failed = match field(schema.failure) {
        "0" => false,
        "1" => true,
        other => return Err(err(RowErrorCause::BadFailureFlag(other.to_string()))),
    };

    let mut smart = BTreeMap::new();
    for &(col, key) in &schema.smart_columns {
        let cell = field(col);
        if cell.is_empty() {
            continue;
        }
        let value: f64 = cell.parse().map_err(|_| {
            err(RowErrorCause::BadNumber {
                column: key.column_name(),
                value: cell.to_string(),
            })
        })?;
        if !value.is_finite() {
            return Err(err(RowErrorCause::BadNumber {
                column: key.column_name(),
                value: cell.to_string(),
            }));
        }
        match key.kind {
            SmartKind::Normalized if !(1.0..=253.0).contains(&value) => {
                return Err(err(RowErrorCause::NormalizedOutOfRange {
                    column: key.column_name(),
                    value: cell.to_string(),
                }));
            }
            SmartKind::Raw if value < 0.0 => {
                return Err(err(RowErrorCause::NegativeRawValue {
                    column: key.column_name(),
                    value: cell.to_string(),
                }));
            }
            _ => {}
        }
        smart.insert(key, value);
    }

    Ok(DriveDaySnapshot {
        date,
        serial: serial.to_string(),
        model,
        capacity_bytes,
        failed,
        smart,
    })
}

/// Streaming snapshot reader over any byte source.
pub struct SnapshotReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    schema: SchemaMap,
    line: u64,
}

impl<R: Read> SnapshotReader<R> {
    /// Read and validate the header, leaving the reader positioned at the
    /// first data row.
    pub fn new(reader: R) -> Result<Self, IngestError> {
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header: Vec<String> = csv.headers()?.iter().map(|s| s.to_string()).collect();
        let schema = validate_header(&header)?;
        Ok(SnapshotReader {
            records: csv.into_records(),
            schema,
            line: 1,
        })
    }

    pub fn schema(&self) -> &SchemaMap {
        &self.schema
    }
}

impl<R: Read> Iterator for SnapshotReader<R> {
    type Item = Result<DriveDaySnapshot, RowError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.line += 1;
        match self.records.next()? {
            Ok(record) => Some(parse_row(&record, &self.schema, self.line)),
            Err(e) => Some(Err(RowError {
                line: self.line,
                cause: RowErrorCause::Malformed(e.to_string()),
            })),
        }
    }
}

/// Options for bulk reading.
#[derive(Debug, Clone)]
pub struct ReadOptions {
    /// Abort when the bad-row fraction exceeds this value (default 1%).
    pub max_bad_fraction: f64,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions { max_bad_fraction: 0.01 }
    }
}

/// Drain a reader, collecting good snapshots and row errors. Fails when the
/// bad-row fraction exceeds the tolerance.
pub fn read_snapshots<R: Read>(
    reader: SnapshotReader<R>,
    options: &ReadOptions,
) -> Result<(Vec<DriveDaySnapshot>, Vec<RowError>), IngestError> {
    let mut snapshots = Vec::new();
    let mut errors = Vec::new();
    for item in reader {
        match item {
            Ok(s) => snapshots.push(s),
            Err(e) => errors.push(e),
        }
    }
    let total = snapshots.len() + errors.len();
    if total > 0 {
        let bad_fraction = errors.len() as f64 / total as f64;
        if bad_fraction > options.max_bad_fraction {
            return Err(IngestError::TooManyBadRows {
                bad: errors.len(),
                total,
                tolerance: options.max_bad_fraction,
            });
        }
    }
    Ok((snapshots, errors))
}

/// Open a snapshot file, transparently decompressing `.gz` inputs.
pub fn open_snapshot_file(path: &Path) -> Result<SnapshotReader<Box<dyn Read>>, IngestError> {
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(flate2::read::GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    SnapshotReader::new(reader)
}

/// Keep only snapshots of one exact drive model, order preserved.
pub fn filter_model<I>(snapshots: I, model: &str) -> impl Iterator<Item = DriveDaySnapshot> + '_
where
    I: IntoIterator<Item = DriveDaySnapshot>,
    I::IntoIter: 'static,
{
    let model = model.to_string();
    snapshots.into_iter().filter(move |s| s.model == model)
}

/// All SMART keys present in any of the snapshots, sorted.
pub fn collect_smart_keys(snapshots: &[DriveDaySnapshot]) -> Vec<SmartKey> {
    let mut keys: Vec<SmartKey> = snapshots
        .iter()
        .flat_map(|s| s.smart.keys().copied())
        .collect();
    keys.sort();
    keys.dedup();
    keys
}

/// Format a SMART value the way the archive does: integral values without a
/// trailing fraction. `f64` Display round-trips exactly.
pub fn format_smart_value(v: f64) -> String {
    format!("{v}")
}

/// Write snapshots back out in the Backblaze CSV schema, with SMART columns
/// limited to `keys` (in order). The output re-parses to the same snapshots.
pub fn write_snapshots_csv<W: Write>(
    writer: W,
    snapshots: &[DriveDaySnapshot],
    keys: &[SmartKey],
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "date".to_string(),
        "serial_number".to_string(),
        "model".to_string(),
        "capacity_bytes".to_string(),
        "failure".to_string(),
    ];
    header.extend(keys.iter().map(|k| k.column_name()));
    w.write_record(&header)?;

    for s in snapshots {
        let mut row = vec![
            s.date.format("%Y-%m-%d").to_string(),
            s.serial.clone(),
            s.model.clone(),
            s.capacity_bytes.map(|c| c.to_string()).unwrap_or_default(),
            if s.failed { "1".into() } else { "0".into() },
        ];
        for key in keys {
            row.push(s.smart.get(key).map(|&v| format_smart_value(v)).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
