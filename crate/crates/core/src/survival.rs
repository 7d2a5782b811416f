//! Nonparametric survival estimation: Kaplan-Meier product-limit curves,
//! restricted mean survival time, and the two-sample log-rank statistic.
//!
//! Durations are integer days throughout, matching daily snapshots. Ties
//! between a death and a censoring at the same time treat the censoring as
//! occurring after the death (classical product-limit convention).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Step-function survival estimate. Support points are the distinct event
/// times (times with at least one death); `S(t) = 1` before the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMCurve {
    /// Strictly increasing event times (days).
    pub times: Vec<u32>,
    /// Survival value at and after each support point; non-increasing.
    pub survival: Vec<f64>,
    /// Number at risk just before each support point.
    pub at_risk: Vec<u32>,
    /// Deaths at each support point.
    pub deaths: Vec<u32>,
    pub n_total: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SurvivalError {
    #[error("empty input")]
    EmptyInput,
    #[error("empty group")]
    EmptyGroup,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Kaplan-Meier product-limit estimate over `(duration_days, event)` samples.
pub fn kaplan_meier(samples: &[(u32, bool)]) -> Result<KMCurve, SurvivalError> {
    if samples.is_empty() {
        return Err(SurvivalError::EmptyInput);
    }
    let mut sorted: Vec<(u32, bool)> = samples.to_vec();
    sorted.sort_by_key(|&(t, _)| t);

    let n = sorted.len() as u32;
    let mut times = Vec::new();
    let mut survival = Vec::new();
    let mut at_risk = Vec::new();
    let mut deaths = Vec::new();

    // The running product Π (n_i - d_i) / n_i is tracked as a gcd-reduced
    // u128 rational while it fits, so each survival value is one correctly
    // rounded division of the exact probability. In particular, with zero
    // censoring the product telescopes and S(t_j) equals the float division
    // `alive / n` bit-for-bit. On (pathological) overflow the tail of the
    // curve falls back to float multiplication.
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    let mut exact = true;
    let mut s = 1.0f64;
    let mut i = 0usize;
    while i < sorted.len() {
        let t = sorted[i].0;
        let risk = (sorted.len() - i) as u32;
        let mut d = 0u32;
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == t {
            if sorted[j].1 {
                d += 1;
            }
            j += 1;
        }
        if d > 0 {
            if exact {
                match (
                    num.checked_mul((risk - d) as u128),
                    den.checked_mul(risk as u128),
                ) {
                    (Some(new_num), Some(new_den)) => {
                        let g = gcd(new_num, new_den);
                        num = new_num / g;
                        den = new_den / g;
                        s = num as f64 / den as f64;
                    }
                    _ => {
                        exact = false;
                        s *= 1.0 - d as f64 / risk as f64;
                    }
                }
            } else {
                s *= 1.0 - d as f64 / risk as f64;
            }
            times.push(t);
            survival.push(s);
            at_risk.push(risk);
            deaths.push(d);
        }
        i = j;
    }

    Ok(KMCurve { times, survival, at_risk, deaths, n_total: n })
}

/// Evaluate the step function `S(t)`.
pub fn survival_at(curve: &KMCurve, t: u32) -> f64 {
    // Largest support point <= t; S = 1 before the first.
    match curve.times.partition_point(|&tj| tj <= t) {
        0 => 1.0,
        k => curve.survival[k - 1],
    }
}

/// Restricted mean survival time: the exact integral of `S(t)` over
/// `[0, tau]` for the step function.
pub fn restricted_mean_survival(curve: &KMCurve, tau: u32) -> f64 {
    let tau = tau as f64;
    let mut area = 0.0;
    let mut prev_t = 0.0;
    let mut prev_s = 1.0;
    for (&t, &s) in curve.times.iter().zip(&curve.survival) {
        let t = t as f64;
        if t >= tau {
            break;
        }
        area += prev_s * (t - prev_t);
        prev_t = t;
        prev_s = s;
    }
    area + prev_s * (tau - prev_t)
}

/// Per-event-time pooled counts used by the log-rank statistic: total deaths
/// `d_j`, total at risk `n_j`, and group-A deaths `d_aj` / at-risk `n_aj`.
///
/// The statistic is a pure function of these integer counts, so incremental
/// split scans that maintain the counts reproduce [`log_rank`] bit-for-bit.
pub fn log_rank_from_counts(d: &[u32], n: &[u32], d_a: &[u32], n_a: &[u32]) -> f64 {
    let mut obs_minus_exp = 0.0f64;
    let mut variance = 0.0f64;
    for j in 0..d.len() {
        let dj = d[j] as f64;
        let nj = n[j] as f64;
        let naj = n_a[j] as f64;
        if n[j] == 0 {
            continue;
        }
        let e = dj * naj / nj;
        obs_minus_exp += d_a[j] as f64 - e;
        if n[j] > 1 {
            let frac = naj / nj;
            variance += dj * frac * (1.0 - frac) * (nj - dj) / (nj - 1.0);
        }
    }
    if variance == 0.0 {
        return 0.0;
    }
    obs_minus_exp * obs_minus_exp / variance
}

/// Two-sample log-rank chi-square statistic.
pub fn log_rank(group_a: &[(u32, bool)], group_b: &[(u32, bool)]) -> Result<f64, SurvivalError> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(SurvivalError::EmptyGroup);
    }

    // Pooled distinct event times.
    let mut event_times: Vec<u32> = group_a
        .iter()
        .chain(group_b)
        .filter(|&&(_, e)| e)
        .map(|&(t, _)| t)
        .collect();
    event_times.sort_unstable();
    event_times.dedup();
    if event_times.is_empty() {
        return Ok(0.0);
    }

    let k = event_times.len();
    let idx = |t: u32| event_times.partition_point(|&tj| tj < t);

    let mut d = vec![0u32; k];
    let mut n = vec![0u32; k];
    let mut d_a = vec![0u32; k];
    let mut n_a = vec![0u32; k];

    for (group, in_a) in [(group_a, true), (group_b, false)] {
        for &(t, event) in group {
            // At risk at every event time <= t.
            let upto = event_times.partition_point(|&tj| tj <= t);
            for j in 0..upto {
                n[j] += 1;
                if in_a {
                    n_a[j] += 1;
                }
            }
            if event {
                let j = idx(t);
                d[j] += 1;
                if in_a {
                    d_a[j] += 1;
                }
            }
        }
    }

    Ok(log_rank_from_counts(&d, &n, &d_a, &n_a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_rejected() {
        assert_eq!(kaplan_meier(&[]).unwrap_err(), SurvivalError::EmptyInput);
    }

    #[test]
    fn all_censored_gives_unit_survival() {
        let curve = kaplan_meier(&[(5, false), (9, false)]).unwrap();
        assert!(curve.times.is_empty());
        assert_eq!(survival_at(&curve, 0), 1.0);
        assert_eq!(survival_at(&curve, 100), 1.0);
    }

    #[test]
    fn worked_product_limit_example() {
        // n=3 at t=10 (1 death), censoring at 20, n=1 at t=30 (1 death).
        let curve = kaplan_meier(&[(10, true), (20, false), (30, true)]).unwrap();
        assert_eq!(curve.times, vec![10, 30]);
        assert_eq!(curve.at_risk, vec![3, 1]);
        assert_eq!(curve.deaths, vec![1, 1]);
        assert_eq!(survival_at(&curve, 5), 1.0);
        assert!((survival_at(&curve, 15) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(survival_at(&curve, 30), 0.0);
        assert_eq!(survival_at(&curve, 99), 0.0);
    }

    #[test]
    fn death_censoring_tie_rule() {
        // Censoring at the same time counts as at risk for the deaths.
        let curve = kaplan_meier(&[(5, true), (5, true), (5, false)]).unwrap();
        assert_eq!(curve.times, vec![5]);
        assert_eq!(curve.at_risk, vec![3]);
        assert_eq!(curve.deaths, vec![2]);
        assert!((curve.survival[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rmst_rectangles() {
        // S = 1 until 10 then 0.
        let curve = kaplan_meier(&[(10, true)]).unwrap();
        assert_eq!(restricted_mean_survival(&curve, 20), 10.0);

        let flat = kaplan_meier(&[(100, false)]).unwrap();
        assert_eq!(restricted_mean_survival(&flat, 90), 90.0);

        let curve = kaplan_meier(&[(10, true), (20, false), (30, true)]).unwrap();
        let expected = 10.0 + 20.0 * (2.0 / 3.0);
        assert!((restricted_mean_survival(&curve, 30) - expected).abs() < 1e-12);
    }

    #[test]
    fn rmst_truncates_before_first_event() {
        let curve = kaplan_meier(&[(10, true)]).unwrap();
        assert_eq!(restricted_mean_survival(&curve, 5), 5.0);
    }

    #[test]
    fn log_rank_identical_groups_is_zero() {
        let g = [(3, true), (7, false), (9, true)];
        assert_eq!(log_rank(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn log_rank_separated_groups_positive() {
        let a = [(1, true), (2, true)];
        let b = [(3, true), (4, true)];
        let stat = log_rank(&a, &b).unwrap();
        assert!(stat > 0.0, "stat = {stat}");
    }

    #[test]
    fn log_rank_no_events_is_zero() {
        let a = [(1, false), (2, false)];
        let b = [(3, false)];
        assert_eq!(log_rank(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn log_rank_empty_group_rejected() {
        assert_eq!(log_rank(&[], &[(1, true)]).unwrap_err(), SurvivalError::EmptyGroup);
    }

    #[test]
    fn log_rank_symmetric_and_scale_invariant() {
        let a = [(1, true), (5, false), (9, true), (9, false)];
        let b = [(2, true), (3, true), (11, false)];
        let ab = log_rank(&a, &b).unwrap();
        let ba = log_rank(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);

        let scale = |g: &[(u32, bool)]| -> Vec<(u32, bool)> {
            g.iter().map(|&(t, e)| (t * 7, e)).collect()
        };
        let scaled = log_rank(&scale(&a), &scale(&b)).unwrap();
        assert!((ab - scaled).abs() < 1e-12);
    }
}
