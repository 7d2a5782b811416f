//! Shared fixtures for the criterion benchmarks: synthetic fleets turned
//! into the datasets the core algorithms consume.

use drivesurv::dataset::{build_survival_dataset, default_catalog, SurvivalSample};
use drivesurv::synth::{generate_fleet, reference_rule_spec};
use drivesurv::tree::{Target, TreeData};

/// Survival samples from a reference-rule fleet of the given size.
pub fn fleet_samples(n_drives: u32, days: u32, seed: u64) -> Vec<SurvivalSample> {
    let mut spec = reference_rule_spec(seed);
    spec.n_drives = n_drives;
    spec.days = days;
    let (snapshots, _) = generate_fleet(&spec).unwrap();
    let catalog = default_catalog(snapshots.iter().flat_map(|s| s.smart.keys().map(|k| k.id)));
    let start = snapshots.iter().map(|s| s.date).min().unwrap();
    let end = snapshots.iter().map(|s| s.date).max().unwrap();
    build_survival_dataset(&snapshots, start, end, &catalog, false).unwrap()
}

/// The `(duration, event)` pairs of a fleet, for the estimator benchmarks.
pub fn duration_pairs(samples: &[SurvivalSample]) -> Vec<(u32, bool)> {
    samples.iter().map(|s| (s.duration_days, s.event)).collect()
}

/// Tree-ready design matrix for the split and training benchmarks.
pub fn tree_data(samples: &[SurvivalSample]) -> TreeData {
    TreeData::from_survival_samples(samples).unwrap()
}

/// A classification variant of the same fleet (failure within 30 days).
pub fn class_data(samples: &[SurvivalSample]) -> TreeData {
    let n_features = samples[0].features.values.len();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(samples.len()); n_features];
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        for (j, (&v, &m)) in s.features.values.iter().zip(&s.features.missing).enumerate() {
            columns[j].push(if m { None } else { Some(v) });
        }
        labels.push(s.event && s.duration_days <= 30);
    }
    TreeData::new(columns, Target::Class(labels))
}
