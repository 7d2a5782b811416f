//! Single-feature split search: Gini impurity reduction for classification,
//! the two-sample log-rank statistic for censored survival.
//!
//! Both criteria are evaluated from integer counts maintained incrementally
//! across the threshold sweep, so the scan reproduces a from-scratch
//! evaluation of the same counts bit-for-bit.

use serde::{Deserialize, Serialize};

use super::{Target, TreeData};
use crate::survival::log_rank_from_counts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitCriterion {
    Gini,
    LogRank,
}

/// Best admissible split of one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub threshold: f64,
    pub missing_goes_left: bool,
    pub gain: f64,
}

/// Threshold between two consecutive distinct values: their midpoint, bumped
/// to the upper value when rounding would collapse onto the lower one.
pub fn split_threshold(lower: f64, upper: f64) -> f64 {
    let mid = (lower + upper) / 2.0;
    if mid > lower {
        mid
    } else {
        upper
    }
}

pub(crate) fn gini(positive: u64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = positive as f64 / n as f64;
    let q = (n - positive) as f64 / n as f64;
    1.0 - p * p - q * q
}

/// Impurity reduction of a two-way class partition, as a pure function of
/// integer counts: parent positives/size and left-side positives/size.
/// Split scans and any independent re-evaluation of the same counts agree
/// bit-for-bit.
pub fn gini_gain(
    parent_pos: u64,
    parent_n: u64,
    left_pos: u64,
    left_n: u64,
) -> f64 {
    let right_pos = parent_pos - left_pos;
    let right_n = parent_n - left_n;
    let wl = left_n as f64 / parent_n as f64;
    let wr = right_n as f64 / parent_n as f64;
    gini(parent_pos, parent_n) - wl * gini(left_pos, left_n) - wr * gini(right_pos, right_n)
}

/// `a` strictly precedes `b` in the split ordering: larger gain first, then
/// smaller threshold. Full ties keep the earlier candidate.
fn better(a: &SplitCandidate, b: &SplitCandidate) -> bool {
    a.gain > b.gain || (a.gain == b.gain && a.threshold < b.threshold)
}

/// Scan all midpoint thresholds of `feature` over the samples in `idx` and
/// return the admissible split with the largest criterion gain, or `None`
/// when no admissible split improves. Missing values are tried on both sides
/// and the assignment is part of the returned rule.
pub fn best_split(
    data: &TreeData,
    idx: &[usize],
    feature: usize,
    criterion: SplitCriterion,
    min_samples_leaf: u32,
) -> Option<SplitCandidate> {
    if idx.len() < 2 {
        return None;
    }
    let mut present: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
    let mut missing: Vec<usize> = Vec::new();
    for &i in idx {
        match data.value(i, feature) {
            Some(v) => present.push((v, i)),
            None => missing.push(i),
        }
    }
    present.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if present.len() < 2 || present.first().map(|p| p.0) == present.last().map(|p| p.0) {
        return None;
    }

    let mut best: Option<SplitCandidate> = None;
    let mut consider = |cand: SplitCandidate| {
        if cand.gain > 0.0 && cand.gain.is_finite() {
            if best.map_or(true, |b| better(&cand, &b)) {
                best = Some(cand);
            }
        }
    };

    match (&data.target, criterion) {
        (Target::Class(labels), SplitCriterion::Gini) => {
            let parent_n = idx.len() as u64;
            let parent_pos = idx.iter().filter(|&&i| labels[i]).count() as u64;
            let missing_pos = missing.iter().filter(|&&i| labels[i]).count() as u64;
            for missing_left in [false, true] {
                if missing_left && missing.is_empty() {
                    break;
                }
                let (mut left_pos, mut left_n) = if missing_left {
                    (missing_pos, missing.len() as u64)
                } else {
                    (0, 0)
                };
                for w in 0..present.len() - 1 {
                    let (value, i) = present[w];
                    left_n += 1;
                    left_pos += labels[i] as u64;
                    let next = present[w + 1].0;
                    if next == value {
                        continue;
                    }
                    if left_n < min_samples_leaf as u64
                        || parent_n - left_n < min_samples_leaf as u64
                    {
                        continue;
                    }
                    consider(SplitCandidate {
                        threshold: split_threshold(value, next),
                        missing_goes_left: missing_left,
                        gain: gini_gain(parent_pos, parent_n, left_pos, left_n),
                    });
                }
            }
        }
        (Target::Survival(samples), SplitCriterion::LogRank) => {
            let mut scan = LogRankScan::new(samples, idx);
            for missing_left in [false, true] {
                if missing_left && missing.is_empty() {
                    break;
                }
                scan.reset();
                if missing_left {
                    for &i in &missing {
                        scan.add_to_left(samples[i]);
                    }
                }
                let mut left_n = if missing_left { missing.len() as u64 } else { 0 };
                let parent_n = idx.len() as u64;
                for w in 0..present.len() - 1 {
                    let (value, i) = present[w];
                    scan.add_to_left(samples[i]);
                    left_n += 1;
                    let next = present[w + 1].0;
                    if next == value {
                        continue;
                    }
                    if left_n < min_samples_leaf as u64
                        || parent_n - left_n < min_samples_leaf as u64
                    {
                        continue;
                    }
                    consider(SplitCandidate {
                        threshold: split_threshold(value, next),
                        missing_goes_left: missing_left,
                        gain: scan.statistic(),
                    });
                }
            }
        }
        _ => panic!("split criterion does not match the dataset target"),
    }

    best
}

/// Incremental log-rank state for one node: pooled per-event-time counts are
/// fixed; the left-group membership counts are updated as samples cross the
/// threshold. `statistic()` assembles the same integer count vectors that
/// [`crate::survival::log_rank`] derives, so values agree exactly.
struct LogRankScan {
    /// Distinct durations of the node's samples, ascending.
    durations: Vec<u32>,
    /// Positions in `durations` that carry at least one event.
    event_positions: Vec<usize>,
    /// Pooled deaths per event time.
    deaths: Vec<u32>,
    /// Pooled at-risk per event time.
    at_risk: Vec<u32>,
    /// Left-group sample count per distinct duration.
    left_count: Vec<u32>,
    /// Left-group deaths per distinct duration.
    left_events: Vec<u32>,
    // Scratch buffers for statistic assembly.
    buf_d_a: Vec<u32>,
    buf_n_a: Vec<u32>,
}

impl LogRankScan {
    fn new(samples: &[(u32, bool)], idx: &[usize]) -> Self {
        let mut durations: Vec<u32> = idx.iter().map(|&i| samples[i].0).collect();
        durations.sort_unstable();
        durations.dedup();
        let m = durations.len();

        let mut count_all = vec![0u32; m];
        let mut events_all = vec![0u32; m];
        for &i in idx {
            let (t, e) = samples[i];
            let pos = durations.partition_point(|&d| d < t);
            count_all[pos] += 1;
            events_all[pos] += e as u32;
        }

        let event_positions: Vec<usize> =
            (0..m).filter(|&p| events_all[p] > 0).collect();
        let k = event_positions.len();

        // Pooled at-risk at each event time: suffix sums of per-duration counts.
        let mut suffix = vec![0u32; m + 1];
        for p in (0..m).rev() {
            suffix[p] = suffix[p + 1] + count_all[p];
        }
        let deaths: Vec<u32> = event_positions.iter().map(|&p| events_all[p]).collect();
        let at_risk: Vec<u32> = event_positions.iter().map(|&p| suffix[p]).collect();

        LogRankScan {
            durations,
            event_positions,
            deaths,
            at_risk,
            left_count: vec![0; m],
            left_events: vec![0; m],
            buf_d_a: vec![0; k],
            buf_n_a: vec![0; k],
        }
    }

    fn reset(&mut self) {
        self.left_count.fill(0);
        self.left_events.fill(0);
    }

    fn add_to_left(&mut self, sample: (u32, bool)) {
        let (t, e) = sample;
        let pos = self.durations.partition_point(|&d| d < t);
        self.left_count[pos] += 1;
        self.left_events[pos] += e as u32;
    }

    fn statistic(&mut self) -> f64 {
        // Left-group at-risk at each event time via one descending sweep.
        let m = self.durations.len();
        let mut running = 0u32;
        let mut next_event = self.event_positions.len();
        for p in (0..m).rev() {
            running += self.left_count[p];
            while next_event > 0 && self.event_positions[next_event - 1] == p {
                next_event -= 1;
                self.buf_n_a[next_event] = running;
            }
        }
        for (j, &p) in self.event_positions.iter().enumerate() {
            self.buf_d_a[j] = self.left_events[p];
        }
        log_rank_from_counts(&self.deaths, &self.at_risk, &self.buf_d_a, &self.buf_n_a)
    }
}
