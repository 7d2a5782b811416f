//! Labeled dataset construction from snapshot streams: survival samples with
//! censoring, fixed-horizon classification samples, feature-set curation, and
//! leakage-free serial-level splits.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{DriveDaySnapshot, SmartKey};

/// SMART attributes that are cumulative counts over the drive lifespan and
/// therefore proxies for age rather than health.
pub const CUMULATIVE_SMART_IDS: [u16; 8] = [4, 9, 12, 192, 193, 240, 241, 242];

/// Ordered list of SMART columns retained as model features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub entries: Vec<SmartKey>,
    pub excluded_ids: Vec<u16>,
}

impl FeatureCatalog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, key: SmartKey) -> Option<usize> {
        self.entries.iter().position(|&e| e == key)
    }

    /// CSV column names, one per entry.
    pub fn column_names(&self) -> Vec<String> {
        self.entries.iter().map(|k| k.column_name()).collect()
    }
}

/// Catalog over every observed attribute id except the cumulative-count ids,
/// retaining both raw and normalized kinds per id.
pub fn default_catalog<I: IntoIterator<Item = u16>>(observed_ids: I) -> FeatureCatalog {
    let mut ids: Vec<u16> = observed_ids
        .into_iter()
        .filter(|id| !CUMULATIVE_SMART_IDS.contains(id))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let mut entries = Vec::with_capacity(ids.len() * 2);
    for id in ids {
        entries.push(SmartKey::raw(id));
        entries.push(SmartKey::normalized(id));
    }
    FeatureCatalog { entries, excluded_ids: CUMULATIVE_SMART_IDS.to_vec() }
}

/// Dense feature vector with a missing-value mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        if self.missing[i] {
            None
        } else {
            Some(self.values[i])
        }
    }
}

/// Extract the catalog's features from one snapshot; absent SMART entries
/// become masked.
pub fn featurize(snapshot: &DriveDaySnapshot, catalog: &FeatureCatalog) -> FeatureVector {
    let mut values = Vec::with_capacity(catalog.len());
    let mut missing = Vec::with_capacity(catalog.len());
    for key in &catalog.entries {
        match snapshot.smart.get(key) {
            Some(&v) => {
                values.push(v);
                missing.push(false);
            }
            None => {
                values.push(0.0);
                missing.push(true);
            }
        }
    }
    FeatureVector { values, missing }
}

/// One censored-survival training sample: `event == false` means the drive
/// was still alive when last observed, so `duration_days` is a lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSample {
    pub features: FeatureVector,
    pub duration_days: u32,
    pub event: bool,
    pub serial: String,
    pub snapshot_date: NaiveDate,
}

/// One fixed-horizon classification sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSample {
    pub features: FeatureVector,
    pub label: bool,
    pub serial: String,
    pub snapshot_date: NaiveDate,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid window: start {start} is after end {end}")]
    InvalidWindow { start: NaiveDate, end: NaiveDate },
    #[error("invalid horizon: {0} (must be >= 1)")]
    InvalidHorizon(i64),
    #[error("negative duration for serial {serial}: snapshot {snapshot} after failure day {failure}")]
    NegativeDuration { serial: String, snapshot: NaiveDate, failure: NaiveDate },
    #[error("degenerate split: need at least 2 distinct serials, got {0}")]
    DegenerateSplit(usize),
    #[error("empty sample set")]
    EmptySamples,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad dataset file: {0}")]
    BadFile(String),
}

/// Per-drive timeline: the snapshots of one serial plus its failure day (if
/// observed) and last observed day.
struct Timeline<'a> {
    snapshots: Vec<&'a DriveDaySnapshot>,
    failure_day: Option<NaiveDate>,
    last_day: NaiveDate,
}

fn build_timelines(snapshots: &[DriveDaySnapshot]) -> BTreeMap<&str, Timeline<'_>> {
    let mut map: BTreeMap<&str, Timeline<'_>> = BTreeMap::new();
    for s in snapshots {
        let entry = map.entry(&s.serial).or_insert_with(|| Timeline {
            snapshots: Vec::new(),
            failure_day: None,
            last_day: s.date,
        });
        entry.snapshots.push(s);
        entry.last_day = entry.last_day.max(s.date);
        if s.failed {
            entry.failure_day = Some(match entry.failure_day {
                Some(d) => d.min(s.date),
                None => s.date,
            });
        }
    }
    map
}

/// Build censored survival samples, one per snapshot inside the window.
///
/// Drives whose failure day is observed yield `event = true` with duration
/// `failure_day - snapshot_date`; never-failing drives are censored at their
/// last observed day. `failing_only` drops never-failing drives entirely (the
/// long-term health regime).
pub fn build_survival_dataset(
    snapshots: &[DriveDaySnapshot],
    window_start: NaiveDate,
    window_end: NaiveDate,
    catalog: &FeatureCatalog,
    failing_only: bool,
) -> Result<Vec<SurvivalSample>, DatasetError> {
    if window_start > window_end {
        return Err(DatasetError::InvalidWindow { start: window_start, end: window_end });
    }
    let mut samples = Vec::new();
    for (serial, timeline) in build_timelines(snapshots) {
        if failing_only && timeline.failure_day.is_none() {
            continue;
        }
        for snap in &timeline.snapshots {
            if snap.date < window_start || snap.date > window_end {
                continue;
            }
            let (anchor, event) = match timeline.failure_day {
                Some(f) => (f, true),
                None => (timeline.last_day, false),
            };
            let duration = (anchor - snap.date).num_days();
            if duration < 0 {
                return Err(DatasetError::NegativeDuration {
                    serial: serial.to_string(),
                    snapshot: snap.date,
                    failure: anchor,
                });
            }
            samples.push(SurvivalSample {
                features: featurize(snap, catalog),
                duration_days: duration as u32,
                event,
                serial: serial.to_string(),
                snapshot_date: snap.date,
            });
        }
    }
    Ok(samples)
}

/// Build fixed-horizon classification samples. Label is true iff the drive's
/// observed failure falls within `horizon_days` of the snapshot. Snapshots of
/// never-failing drives whose observation ends before the horizon are dropped
/// (label undeterminable).
pub fn build_classification_dataset(
    snapshots: &[DriveDaySnapshot],
    window_start: NaiveDate,
    window_end: NaiveDate,
    horizon_days: u32,
    catalog: &FeatureCatalog,
) -> Result<Vec<ClassSample>, DatasetError> {
    if window_start > window_end {
        return Err(DatasetError::InvalidWindow { start: window_start, end: window_end });
    }
    if horizon_days < 1 {
        return Err(DatasetError::InvalidHorizon(horizon_days as i64));
    }
    let mut samples = Vec::new();
    for (serial, timeline) in build_timelines(snapshots) {
        for snap in &timeline.snapshots {
            if snap.date < window_start || snap.date > window_end {
                continue;
            }
            let label = match timeline.failure_day {
                Some(f) => {
                    let days = (f - snap.date).num_days();
                    if days < 0 {
                        return Err(DatasetError::NegativeDuration {
                            serial: serial.to_string(),
                            snapshot: snap.date,
                            failure: f,
                        });
                    }
                    days <= horizon_days as i64
                }
                None => {
                    let observed = (timeline.last_day - snap.date).num_days();
                    if observed < horizon_days as i64 {
                        continue; // undeterminable, never guessed negative
                    }
                    false
                }
            };
            samples.push(ClassSample {
                features: featurize(snap, catalog),
                label,
                serial: serial.to_string(),
                snapshot_date: snap.date,
            });
        }
    }
    Ok(samples)
}

/// Anything carrying a drive serial; lets the serial-level split work for
/// both sample types.
pub trait HasSerial {
    fn serial(&self) -> &str;
}

impl HasSerial for SurvivalSample {
    fn serial(&self) -> &str {
        &self.serial
    }
}

impl HasSerial for ClassSample {
    fn serial(&self) -> &str {
        &self.serial
    }
}

/// Deterministically pick the test-side serials: sort and dedup, shuffle with
/// a seeded generator, and take a rounded fraction clamped so both sides are
/// nonempty.
pub fn choose_test_serials<S: AsRef<str>>(
    serials: &[S],
    test_fraction: f64,
    seed: u64,
) -> Result<std::collections::BTreeSet<String>, DatasetError> {
    let mut serials: Vec<String> = serials.iter().map(|s| s.as_ref().to_string()).collect();
    serials.sort();
    serials.dedup();
    if serials.len() < 2 {
        return Err(DatasetError::DegenerateSplit(serials.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    serials.shuffle(&mut rng);
    let n_test = ((serials.len() as f64 * test_fraction).round() as usize)
        .clamp(1, serials.len() - 1);
    Ok(serials.into_iter().take(n_test).collect())
}

/// Partition samples into train/test by drive serial, so no drive contributes
/// to both sides. Deterministic for a fixed seed.
pub fn split_by_serial<S: HasSerial>(
    samples: Vec<S>,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<S>, Vec<S>), DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::EmptySamples);
    }
    let serials: Vec<&str> = samples.iter().map(|s| s.serial()).collect();
    let test_serials = choose_test_serials(&serials, test_fraction, seed)?;

    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in samples {
        if test_serials.contains(s.serial()) {
            test.push(s);
        } else {
            train.push(s);
        }
    }
    Ok((train, test))
}

/// Sidecar describing how a dataset file was produced; sufficient to
/// reproduce the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub mode: String,
    pub catalog: FeatureCatalog,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub horizon_days: Option<u32>,
    pub failing_only: Option<bool>,
    pub test_fraction: f64,
    pub split_seed: u64,
}

fn write_feature_cells(row: &mut Vec<String>, features: &FeatureVector) {
    for i in 0..features.len() {
        row.push(match features.get(i) {
            Some(v) => crate::telemetry::format_smart_value(v),
            None => String::new(),
        });
    }
}

/// Write survival samples as CSV: serial, snapshot_date, duration_days,
/// event, then one column per catalog entry (empty = masked).
pub fn write_survival_csv<W: Write>(
    writer: W,
    samples: &[SurvivalSample],
    catalog: &FeatureCatalog,
) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "serial".to_string(),
        "snapshot_date".to_string(),
        "duration_days".to_string(),
        "event".to_string(),
    ];
    header.extend(catalog.column_names());
    w.write_record(&header)?;
    for s in samples {
        let mut row = vec![
            s.serial.clone(),
            s.snapshot_date.format("%Y-%m-%d").to_string(),
            s.duration_days.to_string(),
            if s.event { "1".into() } else { "0".into() },
        ];
        write_feature_cells(&mut row, &s.features);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Write classification samples as CSV: serial, snapshot_date, label, then
/// feature columns.
pub fn write_class_csv<W: Write>(
    writer: W,
    samples: &[ClassSample],
    catalog: &FeatureCatalog,
) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "serial".to_string(),
        "snapshot_date".to_string(),
        "label".to_string(),
    ];
    header.extend(catalog.column_names());
    w.write_record(&header)?;
    for s in samples {
        let mut row = vec![
            s.serial.clone(),
            s.snapshot_date.format("%Y-%m-%d").to_string(),
            if s.label { "1".into() } else { "0".into() },
        ];
        write_feature_cells(&mut row, &s.features);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_features(
    record: &csv::StringRecord,
    offset: usize,
    n_features: usize,
) -> Result<FeatureVector, DatasetError> {
    let mut values = Vec::with_capacity(n_features);
    let mut missing = Vec::with_capacity(n_features);
    for i in 0..n_features {
        let cell = record.get(offset + i).unwrap_or("").trim();
        if cell.is_empty() {
            values.push(0.0);
            missing.push(true);
        } else {
            values.push(cell.parse().map_err(|_| {
                DatasetError::BadFile(format!("unparseable feature value {cell:?}"))
            })?);
            missing.push(false);
        }
    }
    Ok(FeatureVector { values, missing })
}

fn parse_date(cell: &str) -> Result<NaiveDate, DatasetError> {
    NaiveDate::parse_from_str(cell, "%Y-%m-%d")
        .map_err(|_| DatasetError::BadFile(format!("unparseable date {cell:?}")))
}

fn parse_flag(cell: &str) -> Result<bool, DatasetError> {
    match cell {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(DatasetError::BadFile(format!("bad flag {other:?}"))),
    }
}

/// Read survival samples written by [`write_survival_csv`].
pub fn read_survival_csv<R: Read>(
    reader: R,
    catalog: &FeatureCatalog,
) -> Result<Vec<SurvivalSample>, DatasetError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut samples = Vec::new();
    for record in r.records() {
        let record = record?;
        samples.push(SurvivalSample {
            serial: record.get(0).unwrap_or("").to_string(),
            snapshot_date: parse_date(record.get(1).unwrap_or(""))?,
            duration_days: record
                .get(2)
                .unwrap_or("")
                .parse()
                .map_err(|_| DatasetError::BadFile("bad duration".into()))?,
            event: parse_flag(record.get(3).unwrap_or(""))?,
            features: parse_features(&record, 4, catalog.len())?,
        });
    }
    Ok(samples)
}

/// Read classification samples written by [`write_class_csv`].
pub fn read_class_csv<R: Read>(
    reader: R,
    catalog: &FeatureCatalog,
) -> Result<Vec<ClassSample>, DatasetError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut samples = Vec::new();
    for record in r.records() {
        let record = record?;
        samples.push(ClassSample {
            serial: record.get(0).unwrap_or("").to_string(),
            snapshot_date: parse_date(record.get(1).unwrap_or(""))?,
            label: parse_flag(record.get(2).unwrap_or(""))?,
            features: parse_features(&record, 3, catalog.len())?,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap as Map;

    fn day(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn snap(serial: &str, date: NaiveDate, failed: bool, smart: &[(SmartKey, f64)]) -> DriveDaySnapshot {
        DriveDaySnapshot {
            date,
            serial: serial.into(),
            model: "m".into(),
            capacity_bytes: Some(100),
            failed,
            smart: smart.iter().copied().collect::<Map<_, _>>(),
        }
    }

    #[test]
    fn default_catalog_excludes_cumulative_ids() {
        let catalog = default_catalog([3, 5, 7, 9, 187]);
        let ids: Vec<u16> = {
            let mut ids: Vec<u16> = catalog.entries.iter().map(|k| k.id).collect();
            ids.dedup();
            ids
        };
        assert_eq!(ids, vec![3, 5, 7, 187]);
        assert_eq!(catalog.len(), 8); // both kinds per retained id
    }

    #[test]
    fn default_catalog_all_excluded_is_empty() {
        assert!(default_catalog([9, 12, 240]).is_empty());
    }

    #[test]
    fn featurize_masks_absent_entries() {
        let catalog = FeatureCatalog {
            entries: vec![SmartKey::raw(5), SmartKey::normalized(5)],
            excluded_ids: vec![],
        };
        let s = snap("a", day(2020, 1, 1), false, &[(SmartKey::raw(5), 2.0)]);
        let fv = featurize(&s, &catalog);
        assert_eq!(fv.get(0), Some(2.0));
        assert_eq!(fv.get(1), None);
        assert_eq!(fv.len(), catalog.len());
    }

    fn toy_catalog() -> FeatureCatalog {
        FeatureCatalog { entries: vec![SmartKey::raw(5)], excluded_ids: vec![] }
    }

    #[test]
    fn survival_durations_anchor_on_failure_day() {
        let snaps = vec![
            snap("a", day(2020, 3, 1), false, &[]),
            snap("a", day(2020, 3, 15), true, &[]),
        ];
        let samples = build_survival_dataset(
            &snaps,
            day(2020, 1, 1),
            day(2020, 12, 31),
            &toy_catalog(),
            false,
        )
        .unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].duration_days, 14);
        assert!(samples[0].event);
        // Snapshot on the failure day itself.
        assert_eq!(samples[1].duration_days, 0);
        assert!(samples[1].event);
    }

    #[test]
    fn survival_censoring_anchor_is_last_observed_day() {
        let snaps = vec![
            snap("a", day(2020, 1, 1), false, &[]),
            snap("a", day(2020, 3, 31), false, &[]),
        ];
        let samples = build_survival_dataset(
            &snaps,
            day(2020, 1, 1),
            day(2020, 12, 31),
            &toy_catalog(),
            false,
        )
        .unwrap();
        assert_eq!(samples[0].duration_days, 90);
        assert!(!samples[0].event);
    }

    #[test]
    fn failing_only_drops_never_failing_drives() {
        let snaps = vec![
            snap("a", day(2020, 1, 1), false, &[]),
            snap("a", day(2020, 1, 5), true, &[]),
            snap("b", day(2020, 1, 1), false, &[]),
        ];
        let samples = build_survival_dataset(
            &snaps,
            day(2020, 1, 1),
            day(2020, 12, 31),
            &toy_catalog(),
            true,
        )
        .unwrap();
        assert_eq!(samples.len(), 2);
        assert!(samples.iter().all(|s| s.serial == "a" && s.event));
    }

    #[test]
    fn invalid_window_rejected() {
        let err = build_survival_dataset(
            &[],
            day(2020, 2, 1),
            day(2020, 1, 1),
            &toy_catalog(),
            false,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::InvalidWindow { .. }));
    }

    #[test]
    fn classification_labels_by_horizon() {
        let snaps = vec![
            snap("a", day(2020, 3, 1), false, &[]),
            snap("a", day(2020, 3, 15), true, &[]),
            snap("b", day(2020, 3, 1), false, &[]),
            snap("b", day(2020, 4, 15), true, &[]),
        ];
        let samples = build_classification_dataset(
            &snaps,
            day(2020, 3, 1),
            day(2020, 3, 1),
            30,
            &toy_catalog(),
        )
        .unwrap();
        assert_eq!(samples.len(), 2);
        let by_serial: Map<&str, bool> =
            samples.iter().map(|s| (s.serial.as_str(), s.label)).collect();
        assert_eq!(by_serial["a"], true); // 14 <= 30
        assert_eq!(by_serial["b"], false); // 45 > 30
    }

    #[test]
    fn undeterminable_labels_dropped() {
        // Never-failing drive last seen 19 days after the snapshot: horizon 30
        // extends past the observation, so the sample is dropped.
        let snaps = vec![
            snap("a", day(2020, 3, 1), false, &[]),
            snap("a", day(2020, 3, 20), false, &[]),
        ];
        let samples = build_classification_dataset(
            &snaps,
            day(2020, 3, 1),
            day(2020, 3, 1),
            30,
            &toy_catalog(),
        )
        .unwrap();
        assert!(samples.is_empty());
    }

    #[test]
    fn invalid_horizon_rejected() {
        let err = build_classification_dataset(
            &[],
            day(2020, 1, 1),
            day(2020, 2, 1),
            0,
            &toy_catalog(),
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::InvalidHorizon(0)));
    }

    fn class_sample(serial: &str) -> ClassSample {
        ClassSample {
            features: FeatureVector { values: vec![], missing: vec![] },
            label: false,
            serial: serial.into(),
            snapshot_date: day(2020, 1, 1),
        }
    }

    #[test]
    fn split_partitions_serials() {
        let samples: Vec<ClassSample> = (0..10)
            .flat_map(|i| vec![class_sample(&format!("s{i}")); 3])
            .collect();
        let (train, test) = split_by_serial(samples.clone(), 0.3, 7).unwrap();
        assert_eq!(train.len() + test.len(), 30);
        let test_serials: std::collections::BTreeSet<_> =
            test.iter().map(|s| s.serial.clone()).collect();
        assert_eq!(test_serials.len(), 3);
        assert!(train.iter().all(|s| !test_serials.contains(&s.serial)));

        // Determinism.
        let (train2, test2) = split_by_serial(samples, 0.3, 7).unwrap();
        assert_eq!(train.len(), train2.len());
        assert_eq!(
            test.iter().map(|s| &s.serial).collect::<Vec<_>>(),
            test2.iter().map(|s| &s.serial).collect::<Vec<_>>()
        );
    }

    #[test]
    fn split_single_serial_degenerate() {
        let err = split_by_serial(vec![class_sample("only")], 0.5, 1).unwrap_err();
        assert!(matches!(err, DatasetError::DegenerateSplit(1)));
    }

    #[test]
    fn survival_csv_round_trip() {
        let catalog = toy_catalog();
        let snaps = vec![
            snap("a", day(2020, 1, 1), false, &[(SmartKey::raw(5), 3.0)]),
            snap("a", day(2020, 1, 5), true, &[]),
        ];
        let samples = build_survival_dataset(
            &snaps,
            day(2020, 1, 1),
            day(2020, 12, 31),
            &catalog,
            false,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_survival_csv(&mut buf, &samples, &catalog).unwrap();
        let again = read_survival_csv(buf.as_slice(), &catalog).unwrap();
        assert_eq!(samples, again);
    }
}
