//! Synthetic drive fleets with planted hazard rules over SMART-like
//! features: ground truth for recovery tests and oracle values without the
//! real archive.
//!
//! Lifetimes are per-day Bernoulli (piecewise-geometric in rule state), so
//! survival curves and expected lifetimes have closed forms. Rules match in
//! order; the first matching rule's hazard applies.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{DriveDaySnapshot, SmartKey, SmartKind};

/// Daily evolution of one synthetic SMART feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureGen {
    Constant { value: f64 },
    /// Linear drift from `start` by `per_day` each day.
    Drift { start: f64, per_day: f64 },
    /// Starts at `start`; jumps once to `to` with probability `prob_per_day`
    /// each day and stays there.
    Jump { start: f64, to: f64, prob_per_day: f64 },
    /// Integer jitter: `base` plus a uniform integer in `[-half_range, half_range]`.
    Noise { base: f64, half_range: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cmp {
    /// value < bound
    Lt,
    /// value >= bound
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub key: SmartKey,
    pub cmp: Cmp,
    pub value: f64,
}

impl Condition {
    fn matches(&self, features: &BTreeMap<SmartKey, f64>) -> bool {
        match features.get(&self.key) {
            Some(&v) => match self.cmp {
                Cmp::Lt => v < self.value,
                Cmp::Ge => v >= self.value,
            },
            None => false,
        }
    }
}

/// All conditions must hold for the rule to match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardRule {
    pub conditions: Vec<Condition>,
    pub hazard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub n_drives: u32,
    pub days: u32,
    pub start_date: NaiveDate,
    pub model: String,
    pub features: Vec<(SmartKey, FeatureGen)>,
    /// Ordered; the first matching rule's hazard applies.
    pub rules: Vec<HazardRule>,
    pub baseline_hazard: f64,
    pub seed: u64,
}

/// The planted rule set, echoed alongside the generated fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub rules: Vec<HazardRule>,
    /// Every feature referenced by some rule.
    pub features: Vec<SmartKey>,
    pub baseline_hazard: f64,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

fn validate(spec: &FleetSpec) -> Result<(), SynthError> {
    if spec.n_drives == 0 || spec.days == 0 {
        return Err(SynthError::InvalidSpec("need at least one drive and one day".into()));
    }
    if !(0.0..=1.0).contains(&spec.baseline_hazard) {
        return Err(SynthError::InvalidSpec("baseline hazard must lie in [0, 1]".into()));
    }
    let generated: Vec<SmartKey> = spec.features.iter().map(|&(k, _)| k).collect();
    for rule in &spec.rules {
        if !(0.0..=1.0).contains(&rule.hazard) {
            return Err(SynthError::InvalidSpec("rule hazard must lie in [0, 1]".into()));
        }
        for cond in &rule.conditions {
            if !generated.contains(&cond.key) {
                return Err(SynthError::InvalidSpec(format!(
                    "rule references ungenerated feature {}",
                    cond.key.column_name()
                )));
            }
        }
    }
    Ok(())
}

fn clamp_for_kind(key: SmartKey, v: f64) -> f64 {
    match key.kind {
        SmartKind::Normalized => v.clamp(1.0, 253.0),
        SmartKind::Raw => v.max(0.0),
    }
}

fn step_feature(gen: &FeatureGen, day: u32, state: &mut f64, rng: &mut ChaCha8Rng) -> f64 {
    match gen {
        FeatureGen::Constant { value } => *value,
        FeatureGen::Drift { start, per_day } => start + per_day * day as f64,
        FeatureGen::Jump { start, to, prob_per_day } => {
            if *state == *start && rng.gen::<f64>() < *prob_per_day {
                *state = *to;
            }
            *state
        }
        FeatureGen::Noise { base, half_range } => {
            let r = *half_range as i64;
            base + rng.gen_range(-r..=r) as f64
        }
    }
}

/// Per-drive subseed: drives are generated independently, so parallel
/// generation equals sequential output.
fn drive_seed(master: u64, drive: u32) -> u64 {
    // splitmix64 over the combined value.
    let mut z = master ^ (drive as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Daily hazard in effect for the given feature state.
pub fn hazard_for(features: &BTreeMap<SmartKey, f64>, rules: &[HazardRule], baseline: f64) -> f64 {
    for rule in rules {
        if rule.conditions.iter().all(|c| c.matches(features)) {
            return rule.hazard;
        }
    }
    baseline
}

/// Generate one fleet. Failed drives emit no further rows; the failure day's
/// row carries `failed = true`.
pub fn generate_fleet(spec: &FleetSpec) -> Result<(Vec<DriveDaySnapshot>, PlantedTruth), SynthError> {
    validate(spec)?;
    let mut snapshots = Vec::new();
    for drive in 0..spec.n_drives {
        let mut rng = ChaCha8Rng::seed_from_u64(drive_seed(spec.seed, drive));
        let serial = format!("SYN{drive:06}");
        let mut states: Vec<f64> = spec
            .features
            .iter()
            .map(|(_, g)| match g {
                FeatureGen::Jump { start, .. } => *start,
                _ => 0.0,
            })
            .collect();
        for day in 0..spec.days {
            let mut smart = BTreeMap::new();
            for (slot, (key, gen)) in spec.features.iter().enumerate() {
                let v = step_feature(gen, day, &mut states[slot], &mut rng);
                smart.insert(*key, clamp_for_kind(*key, v));
            }
            let hazard = hazard_for(&smart, &spec.rules, spec.baseline_hazard);
            let failed = rng.gen::<f64>() < hazard;
            snapshots.push(DriveDaySnapshot {
                date: spec.start_date + Duration::days(day as i64),
                serial: serial.clone(),
                model: spec.model.clone(),
                capacity_bytes: Some(12_000_138_625_024),
                failed,
                smart,
            });
            if failed {
                break;
            }
        }
    }

    let mut rule_features: Vec<SmartKey> = spec
        .rules
        .iter()
        .flat_map(|r| r.conditions.iter().map(|c| c.key))
        .collect();
    rule_features.sort();
    rule_features.dedup();

    Ok((
        snapshots,
        PlantedTruth {
            rules: spec.rules.clone(),
            features: rule_features,
            baseline_hazard: spec.baseline_hazard,
        },
    ))
}

/// Reference fleet specification: a reallocated-sectors jump (smart 5 raw
/// turning positive) combined with a scan-error health drop (smart 187
/// normalized below 100) multiplies the baseline hazard by 20; smart 3 is
/// uncorrelated noise.
pub fn reference_rule_spec(seed: u64) -> FleetSpec {
    FleetSpec {
        n_drives: 1000,
        days: 90,
        start_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        model: "SYN12000A".into(),
        features: vec![
            (
                SmartKey::raw(5),
                FeatureGen::Jump { start: 0.0, to: 8.0, prob_per_day: 0.002 },
            ),
            (
                SmartKey::normalized(187),
                FeatureGen::Jump { start: 100.0, to: 97.0, prob_per_day: 0.002 },
            ),
            (
                SmartKey::normalized(3),
                FeatureGen::Noise { base: 100.0, half_range: 5 },
            ),
        ],
        rules: vec![HazardRule {
            conditions: vec![
                Condition { key: SmartKey::raw(5), cmp: Cmp::Ge, value: 1.0 },
                Condition { key: SmartKey::normalized(187), cmp: Cmp::Lt, value: 100.0 },
            ],
            hazard: 0.02,
        }],
        baseline_hazard: 0.001,
        seed,
    }
}

/// Canned fleet used by the planted-rule recovery checks.
pub fn reference_rule_fleet(seed: u64) -> (Vec<DriveDaySnapshot>, PlantedTruth) {
    generate_fleet(&reference_rule_spec(seed)).expect("reference spec is valid")
}
