//! Held-out scoring: ROC/AUC, confusion metrics at a threshold, Youden
//! operating-point selection, and survival-tree evaluation at fixed horizons
//! arranged in the OCT/OST comparison-table layout.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassSample, SurvivalSample};
use crate::tree::{Tree, TreeError, TreeKind};

/// Parallel arrays of per-sample scores and ground-truth labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub serials: Vec<String>,
    pub dates: Vec<NaiveDate>,
}

impl ScoredSet {
    pub fn push(&mut self, score: f64, label: bool, serial: String, date: NaiveDate) {
        self.scores.push(score);
        self.labels.push(label);
        self.serials.push(serial);
        self.dates.push(date);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn class_counts(&self) -> (u64, u64) {
        let positives = self.labels.iter().filter(|&&l| l).count() as u64;
        (positives, self.len() as u64 - positives)
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("degenerate labels: need at least one positive and one negative")]
    DegenerateLabels,
    #[error("horizon {horizon} days exceeds the training window of {window} days")]
    HorizonExceedsWindow { horizon: u32, window: u32 },
    #[error("expected a {expected:?} tree")]
    WrongTreeKind { expected: TreeKind },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// One ROC operating point: predict positive iff `score > threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub false_alarm: f64,
    pub sensitivity: f64,
}

/// ROC points at every distinct score threshold, from (0,0) to (1,1), both
/// coordinates non-decreasing.
pub fn roc_curve(scored: &ScoredSet) -> Result<Vec<RocPoint>, EvalError> {
    let (positives, negatives) = scored.class_counts();
    if positives == 0 || negatives == 0 {
        return Err(EvalError::DegenerateLabels);
    }

    // Sort by score descending; sweep thresholds downward.
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored.scores[b].total_cmp(&scored.scores[a]));

    let mut points = Vec::new();
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0usize;
    while i < order.len() {
        let threshold = scored.scores[order[i]];
        // The point at this threshold counts only samples with a strictly
        // greater score, i.e. everything consumed so far.
        points.push(RocPoint {
            threshold,
            false_alarm: fp as f64 / negatives as f64,
            sensitivity: tp as f64 / positives as f64,
        });
        while i < order.len() && scored.scores[order[i]] == threshold {
            if scored.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        false_alarm: 1.0,
        sensitivity: 1.0,
    });
    Ok(points)
}

/// Area under the ROC curve by the trapezoidal rule; equals pairwise
/// concordance with ties counted one half.
pub fn auc(scored: &ScoredSet) -> Result<f64, EvalError> {
    let points = roc_curve(scored)?;
    let mut area = 0.0;
    for w in points.windows(2) {
        area += (w[1].false_alarm - w[0].false_alarm) * (w[1].sensitivity + w[0].sensitivity) / 2.0;
    }
    Ok(area)
}

/// Confusion counts and derived metrics at one threshold (strict `>` rule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub false_alarm_rate: f64,
}

pub fn confusion_at(scored: &ScoredSet, threshold: f64) -> ConfusionRow {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut tn = 0u64;
    let mut fn_ = 0u64;
    for (&score, &label) in scored.scores.iter().zip(&scored.labels) {
        let predicted = score > threshold;
        match (predicted, label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let total = tp + fp + tn + fn_;
    let rate = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    ConfusionRow {
        threshold,
        tp,
        fp,
        tn,
        fn_,
        accuracy: rate(tp + tn, total),
        sensitivity: rate(tp, tp + fn_),
        false_alarm_rate: rate(fp, fp + tn),
    }
}

/// Operating threshold maximizing Youden's J = sensitivity - false alarm
/// rate; ties break toward the lower false alarm rate (and then the higher
/// threshold, which the sweep order provides).
pub fn select_threshold(points: &[RocPoint]) -> f64 {
    let mut best: Option<&RocPoint> = None;
    for p in points {
        let j = p.sensitivity - p.false_alarm;
        let replace = match best {
            None => true,
            Some(b) => {
                let bj = b.sensitivity - b.false_alarm;
                j > bj || (j == bj && p.false_alarm < b.false_alarm)
            }
        };
        if replace {
            best = Some(p);
        }
    }
    best.map(|p| p.threshold).unwrap_or(0.0)
}

/// Score survival samples with a classification tree; labels are re-derived
/// for the tree's horizon from each sample's duration and event flag.
/// Samples whose label is undeterminable at the horizon are dropped.
pub fn classification_scores(
    tree: &Tree,
    samples: &[SurvivalSample],
    horizon_days: u32,
) -> Result<ScoredSet, EvalError> {
    if tree.kind != TreeKind::Classification {
        return Err(EvalError::WrongTreeKind { expected: TreeKind::Classification });
    }
    scored_at_horizon(tree, samples, horizon_days)
}

/// Score survival samples with a survival tree at a horizon:
/// `score = 1 - S_leaf(horizon)`.
pub fn survival_scores_at_horizon(
    tree: &Tree,
    samples: &[SurvivalSample],
    horizon_days: u32,
) -> Result<ScoredSet, EvalError> {
    if tree.kind != TreeKind::Survival {
        return Err(EvalError::WrongTreeKind { expected: TreeKind::Survival });
    }
    if horizon_days > tree.rmst_horizon {
        return Err(EvalError::HorizonExceedsWindow {
            horizon: horizon_days,
            window: tree.rmst_horizon,
        });
    }
    scored_at_horizon(tree, samples, horizon_days)
}

/// Horizon label for a censored sample: `Some(true)` when failure is
/// observed within the horizon, `Some(false)` when survival past the horizon
/// is observed, `None` when undeterminable.
pub fn horizon_label(duration_days: u32, event: bool, horizon_days: u32) -> Option<bool> {
    if event && duration_days <= horizon_days {
        Some(true)
    } else if duration_days >= horizon_days || event {
        Some(false)
    } else {
        None
    }
}

fn scored_at_horizon(
    tree: &Tree,
    samples: &[SurvivalSample],
    horizon_days: u32,
) -> Result<ScoredSet, EvalError> {
    let mut scored = ScoredSet::default();
    for s in samples {
        let Some(label) = horizon_label(s.duration_days, s.event, horizon_days) else {
            continue;
        };
        let score = tree.failure_score(&s.features, horizon_days)?;
        scored.push(score, label, s.serial.clone(), s.snapshot_date);
    }
    Ok(scored)
}

/// Score classification samples directly against their stored labels.
pub fn class_sample_scores(tree: &Tree, samples: &[ClassSample]) -> Result<ScoredSet, EvalError> {
    if tree.kind != TreeKind::Classification {
        return Err(EvalError::WrongTreeKind { expected: TreeKind::Classification });
    }
    let mut scored = ScoredSet::default();
    for s in samples {
        let score = tree.failure_score(&s.features, 0)?;
        scored.push(score, s.label, s.serial.clone(), s.snapshot_date);
    }
    Ok(scored)
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub horizon_days: u32,
    pub auc: f64,
    #[serde(flatten)]
    pub confusion: ConfusionRow,
}

/// Comparison table: the classification tree at its horizon, and the
/// survival tree at each requested horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub note: String,
    pub rows: Vec<EvalRow>,
}

pub const HORIZON_LABEL_NOTE: &str =
    "labels are re-derived from durations at each evaluation horizon";

/// Build the comparison table: one OCT row at `class_horizon` plus one OST
/// row per entry of `horizons`, all at the given probability threshold
/// (default reporting threshold 0.05).
pub fn evaluate_table(
    class_tree: &Tree,
    survival_tree: &Tree,
    test: &[SurvivalSample],
    class_horizon: u32,
    horizons: &[u32],
    threshold: f64,
) -> Result<EvalReport, EvalError> {
    let mut rows = Vec::new();

    let scored = classification_scores(class_tree, test, class_horizon)?;
    rows.push(EvalRow {
        model: "OCT".into(),
        horizon_days: class_horizon,
        auc: auc(&scored)?,
        confusion: confusion_at(&scored, threshold),
    });

    for &h in horizons {
        let scored = survival_scores_at_horizon(survival_tree, test, h)?;
        rows.push(EvalRow {
            model: "OST".into(),
            horizon_days: h,
            auc: auc(&scored)?,
            confusion: confusion_at(&scored, threshold),
        });
    }

    Ok(EvalReport {
        threshold,
        note: HORIZON_LABEL_NOTE.into(),
        rows,
    })
}

impl EvalReport {
    /// CSV layout: one row per (model, horizon).
    pub fn write_csv<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writeln!(writer, "# {}", self.note)?;
        writeln!(
            writer,
            "model,horizon_days,auc,accuracy,sensitivity,false_alarm_rate,threshold,tp,fp,tn,fn"
        )?;
        for row in &self.rows {
            let c = &row.confusion;
            writeln!(
                writer,
                "{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{}",
                row.model,
                row.horizon_days,
                row.auc,
                c.accuracy,
                c.sensitivity,
                c.false_alarm_rate,
                c.threshold,
                c.tp,
                c.fp,
                c.tn,
                c.fn_
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// ROC points as CSV (threshold, false alarm rate, sensitivity).
pub fn write_roc_csv<W: Write>(points: &[RocPoint], mut writer: W) -> std::io::Result<()> {
    writeln!(writer, "threshold,false_alarm_rate,sensitivity")?;
    for p in points {
        writeln!(writer, "{},{},{}", p.threshold, p.false_alarm, p.sensitivity)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(scores: &[f64], labels: &[bool]) -> ScoredSet {
        let mut set = ScoredSet::default();
        for (&s, &l) in scores.iter().zip(labels) {
            set.push(s, l, "x".into(), NaiveDate::from_ymd_opt(2020, 1, 1).unwrap());
        }
        set
    }

    #[test]
    fn perfect_separation_passes_through_zero_one() {
        let set = scored(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
        let points = roc_curve(&set).unwrap();
        assert!(points
            .iter()
            .any(|p| p.false_alarm == 0.0 && p.sensitivity == 1.0));
        assert_eq!(auc(&set).unwrap(), 1.0);
    }

    #[test]
    fn all_equal_scores_give_diagonal() {
        let set = scored(&[0.5, 0.5, 0.5, 0.5], &[true, false, true, false]);
        let points = roc_curve(&set).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!((points[0].false_alarm, points[0].sensitivity), (0.0, 0.0));
        assert_eq!((points[1].false_alarm, points[1].sensitivity), (1.0, 1.0));
        assert_eq!(auc(&set).unwrap(), 0.5);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let set = scored(&[0.1, 0.2], &[true, true]);
        assert!(matches!(roc_curve(&set), Err(EvalError::DegenerateLabels)));
    }

    #[test]
    fn confusion_hand_count() {
        let set = scored(&[0.9, 0.8, 0.2, 0.1], &[true, false, true, false]);
        let c = confusion_at(&set, 0.5);
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (1, 1, 1, 1));
        assert_eq!(c.accuracy, 0.5);
        assert_eq!(c.sensitivity, 0.5);
        assert_eq!(c.false_alarm_rate, 0.5);
    }

    #[test]
    fn strict_threshold_boundaries() {
        let set = scored(&[1.0, 0.4], &[true, false]);
        let top = confusion_at(&set, 1.0);
        assert_eq!((top.sensitivity, top.false_alarm_rate), (0.0, 0.0));
        let bottom = confusion_at(&set, 0.0);
        assert_eq!((bottom.sensitivity, bottom.false_alarm_rate), (1.0, 1.0));
    }

    #[test]
    fn youden_selects_separating_threshold() {
        let set = scored(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
        let points = roc_curve(&set).unwrap();
        let t = select_threshold(&points);
        // Strict > rule: the separating threshold is the smallest positive
        // score's underlying operating point, reached at threshold 0.2.
        let c = confusion_at(&set, t);
        assert_eq!(c.sensitivity, 1.0);
        assert_eq!(c.false_alarm_rate, 0.0);
    }

    #[test]
    fn youden_diagonal_tie_returns_highest_threshold() {
        let set = scored(&[0.5, 0.5], &[true, false]);
        let points = roc_curve(&set).unwrap();
        assert_eq!(select_threshold(&points), 0.5);
    }

    #[test]
    fn horizon_labels() {
        assert_eq!(horizon_label(14, true, 30), Some(true));
        assert_eq!(horizon_label(45, true, 30), Some(false));
        assert_eq!(horizon_label(45, false, 30), Some(false));
        assert_eq!(horizon_label(19, false, 30), None);
    }
}
