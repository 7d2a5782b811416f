//! Greedy top-down tree induction.

use super::split::{best_split, SplitCandidate};
use super::{make_leaf, SplitRule, Target, Tree, TreeData, TreeError, TreeNode, TrainConfig};

/// Winning split across features: largest gain, then smallest threshold,
/// then smallest feature index.
pub(crate) fn best_split_over_features(
    data: &TreeData,
    idx: &[usize],
    min_samples_leaf: u32,
) -> Option<(usize, SplitCandidate)> {
    let criterion = data.criterion();
    let mut best: Option<(usize, SplitCandidate)> = None;
    for feature in 0..data.n_features() {
        if let Some(cand) = best_split(data, idx, feature, criterion, min_samples_leaf) {
            let replace = match &best {
                None => true,
                Some((_, b)) => {
                    cand.gain > b.gain
                        || (cand.gain == b.gain && cand.threshold < b.threshold)
                }
            };
            if replace {
                best = Some((feature, cand));
            }
        }
    }
    best
}

fn is_pure(data: &TreeData, idx: &[usize]) -> bool {
    match &data.target {
        Target::Class(labels) => {
            let first = labels[idx[0]];
            idx.iter().all(|&i| labels[i] == first)
        }
        // Survival growth stops via the no-admissible-split rule.
        Target::Survival(_) => false,
    }
}

fn grow_node(data: &TreeData, idx: Vec<usize>, depth: u32, config: &TrainConfig) -> TreeNode {
    let rmst_horizon = data.max_duration();
    if depth >= config.max_depth
        || (idx.len() as u64) < 2 * config.min_samples_leaf as u64
        || is_pure(data, &idx)
    {
        return TreeNode::Leaf { payload: make_leaf(data, &idx, rmst_horizon) };
    }
    match best_split_over_features(data, &idx, config.min_samples_leaf) {
        None => TreeNode::Leaf { payload: make_leaf(data, &idx, rmst_horizon) },
        Some((feature, cand)) => {
            let split = SplitRule {
                feature,
                threshold: cand.threshold,
                missing_goes_left: cand.missing_goes_left,
            };
            let (left_idx, right_idx) = data.partition(&idx, &split);
            TreeNode::Internal {
                split,
                left: Box::new(grow_node(data, left_idx, depth + 1, config)),
                right: Box::new(grow_node(data, right_idx, depth + 1, config)),
            }
        }
    }
}

/// Recursive top-down induction: Gini for classification targets, log-rank
/// for survival targets. Stops at depth, leaf-size, purity, or when no
/// admissible split improves.
pub fn grow_greedy(data: &TreeData, config: &TrainConfig) -> Result<Tree, TreeError> {
    if data.n() == 0 {
        return Err(TreeError::EmptyDataset);
    }
    let idx: Vec<usize> = (0..data.n()).collect();
    let root = grow_node(data, idx, 0, config);
    Ok(Tree {
        kind: data.kind(),
        root,
        n_features: data.n_features(),
        rmst_horizon: data.max_duration(),
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::LeafPayload;

    fn config(max_depth: u32) -> TrainConfig {
        TrainConfig {
            max_depth,
            min_samples_leaf: 1,
            complexity: 0.0,
            local_search_rounds: 0,
            seed: 0,
        }
    }

    fn class_data(values: &[f64], labels: &[bool]) -> TreeData {
        TreeData::new(
            vec![values.iter().map(|&v| Some(v)).collect()],
            Target::Class(labels.to_vec()),
        )
    }

    #[test]
    fn pure_dataset_is_single_leaf() {
        let data = class_data(&[1.0, 2.0, 3.0], &[true, true, true]);
        let tree = grow_greedy(&data, &config(5)).unwrap();
        assert!(tree.root.is_leaf());
        match tree.root.leaves()[0] {
            LeafPayload::Class(leaf) => assert_eq!(leaf.probability, 1.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn depth_limit_one_gives_single_split() {
        let data = class_data(&[1.0, 2.0, 3.0, 4.0], &[true, true, false, false]);
        let tree = grow_greedy(&data, &config(1)).unwrap();
        assert_eq!(tree.root.n_splits(), 1);
        assert_eq!(tree.root.n_leaves(), 2);
        assert_eq!(tree.root.depth(), 1);
    }

    #[test]
    fn empty_dataset_rejected() {
        let data = TreeData::new(vec![vec![]], Target::Class(vec![]));
        assert!(matches!(grow_greedy(&data, &config(3)), Err(TreeError::EmptyDataset)));
    }

    #[test]
    fn survival_root_recovers_planted_hazard_jump() {
        // Hazard jumps iff feature > 50: short durations with events above,
        // long censored durations below.
        let mut values = Vec::new();
        let mut samples = Vec::new();
        for i in 0..60u32 {
            let risky = i % 2 == 0;
            values.push(Some(if risky { 60.0 + (i % 7) as f64 } else { 40.0 - (i % 7) as f64 }));
            if risky {
                samples.push((2 + i % 5, true));
            } else {
                samples.push((80 + i % 5, false));
            }
        }
        let data = TreeData::new(vec![values], Target::Survival(samples));
        let tree = grow_greedy(&data, &config(1)).unwrap();
        match &tree.root {
            TreeNode::Internal { split, .. } => {
                assert_eq!(split.feature, 0);
                assert!(split.threshold > 40.0 && split.threshold < 60.0);
            }
            _ => panic!("expected a root split"),
        }
    }

    #[test]
    fn leaf_counts_partition_dataset() {
        let data = class_data(
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            &[true, false, true, false, true, false],
        );
        let tree = grow_greedy(&data, &config(3)).unwrap();
        let total: u32 = tree
            .root
            .leaves()
            .iter()
            .map(|p| match p {
                LeafPayload::Class(l) => l.n_samples,
                _ => unreachable!(),
            })
            .sum();
        assert_eq!(total, 6);
    }
}
