//! Variable importance: each internal node attributes its criterion gain,
//! weighted by the fraction of samples reaching it, to its split feature.

use std::collections::BTreeMap;

use super::split::gini_gain;
use super::{Target, Tree, TreeData, TreeNode};
use crate::dataset::FeatureCatalog;
use crate::survival::log_rank;

fn node_gain(data: &TreeData, idx: &[usize], left: &[usize], right: &[usize]) -> f64 {
    if left.is_empty() || right.is_empty() {
        return 0.0;
    }
    match &data.target {
        Target::Class(labels) => {
            let count = |ids: &[usize]| ids.iter().filter(|&&i| labels[i]).count() as u64;
            gini_gain(count(idx), idx.len() as u64, count(left), left.len() as u64)
        }
        Target::Survival(samples) => {
            let pick = |ids: &[usize]| -> Vec<(u32, bool)> {
                ids.iter().map(|&i| samples[i]).collect()
            };
            log_rank(&pick(left), &pick(right)).unwrap_or(0.0)
        }
    }
}

fn walk(node: &TreeNode, data: &TreeData, idx: Vec<usize>, n_total: usize, scores: &mut [f64]) {
    if let TreeNode::Internal { split, left, right } = node {
        let (left_idx, right_idx) = data.partition(&idx, split);
        let gain = node_gain(data, &idx, &left_idx, &right_idx);
        let weight = idx.len() as f64 / n_total as f64;
        scores[split.feature] += weight * gain;
        walk(left, data, left_idx, n_total, scores);
        walk(right, data, right_idx, n_total, scores);
    }
}

/// Per-feature importance scores, normalized to sum to 1 (all zeros for a
/// single-leaf tree).
pub fn variable_importance(tree: &Tree, data: &TreeData) -> Vec<f64> {
    let mut scores = vec![0.0; data.n_features()];
    let idx: Vec<usize> = (0..data.n()).collect();
    walk(&tree.root, data, idx, data.n(), &mut scores);
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        for s in &mut scores {
            *s /= total;
        }
    }
    scores
}

/// Sum raw and normalized scores of the same SMART attribute id.
pub fn aggregate_importance(scores: &[f64], catalog: &FeatureCatalog) -> BTreeMap<u16, f64> {
    let mut by_id: BTreeMap<u16, f64> = BTreeMap::new();
    for (i, key) in catalog.entries.iter().enumerate() {
        *by_id.entry(key.id).or_insert(0.0) += scores[i];
    }
    by_id
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::SmartKey;
    use crate::tree::{grow_greedy, TrainConfig};

    fn config() -> TrainConfig {
        TrainConfig {
            max_depth: 3,
            min_samples_leaf: 1,
            complexity: 0.0,
            local_search_rounds: 0,
            seed: 0,
        }
    }

    #[test]
    fn single_split_tree_concentrates_importance() {
        let data = TreeData::new(
            vec![
                (0..8).map(|i| Some(if i < 4 { 0.0 } else { 1.0 })).collect(),
                (0..8).map(|i| Some(i as f64)).collect(),
            ],
            Target::Class((0..8).map(|i| i < 4).collect()),
        );
        let tree = grow_greedy(&data, &TrainConfig { max_depth: 1, ..config() }).unwrap();
        let scores = variable_importance(&tree, &data);
        assert_eq!(scores[0], 1.0);
        assert_eq!(scores[1], 0.0);
    }

    #[test]
    fn unused_feature_scores_zero_and_sum_is_one() {
        let data = TreeData::new(
            vec![
                (0..12).map(|i| Some((i % 4) as f64)).collect(),
                (0..12).map(|i| Some((i / 4) as f64)).collect(),
                vec![Some(7.0); 12],
            ],
            Target::Class((0..12).map(|i| i % 4 < 2).collect()),
        );
        let tree = grow_greedy(&data, &config()).unwrap();
        let scores = variable_importance(&tree, &data);
        assert_eq!(scores[2], 0.0);
        assert!((scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregation_sums_kinds_per_id() {
        let catalog = FeatureCatalog {
            entries: vec![
                SmartKey::raw(5),
                SmartKey::normalized(5),
                SmartKey::raw(187),
            ],
            excluded_ids: vec![],
        };
        let by_id = aggregate_importance(&[0.25, 0.35, 0.4], &catalog);
        assert!((by_id[&5] - 0.6).abs() < 1e-12);
        assert!((by_id[&187] - 0.4).abs() < 1e-12);
    }
}
