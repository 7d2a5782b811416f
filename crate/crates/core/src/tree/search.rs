//! Coordinate-descent refinement over split nodes and bottom-up
//! cost-complexity pruning.
//!
//! The search repeatedly visits internal nodes in seeded random order. At
//! each node the candidate moves are: replace the split with the best
//! alternative over all features and thresholds (keeping the subtree shape
//! fixed), or collapse the node to a leaf. A move is kept only when the full
//! tree objective strictly decreases, so the objective trace is strictly
//! decreasing by construction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::split::split_threshold;
use super::{
    class_leaf_miscount, leaf_loss, make_leaf, node_objective, refit_payloads,
    survival_leaf_deviance, SplitRule, Target, Tree, TreeData, TreeNode, TrainConfig,
    tree_objective,
};

/// Path from the root: `false` = left child, `true` = right child.
type Path = Vec<bool>;

fn internal_paths(node: &TreeNode, prefix: &mut Path, out: &mut Vec<Path>) {
    if let TreeNode::Internal { left, right, .. } = node {
        out.push(prefix.clone());
        prefix.push(false);
        internal_paths(left, prefix, out);
        prefix.pop();
        prefix.push(true);
        internal_paths(right, prefix, out);
        prefix.pop();
    }
}

fn node_at<'a>(root: &'a TreeNode, path: &[bool]) -> Option<&'a TreeNode> {
    let mut node = root;
    for &go_right in path {
        match node {
            TreeNode::Internal { left, right, .. } => {
                node = if go_right { right } else { left };
            }
            TreeNode::Leaf { .. } => return None,
        }
    }
    Some(node)
}

fn node_at_mut<'a>(root: &'a mut TreeNode, path: &[bool]) -> Option<&'a mut TreeNode> {
    let mut node = root;
    for &go_right in path {
        match node {
            TreeNode::Internal { left, right, .. } => {
                node = if go_right { right } else { left };
            }
            TreeNode::Leaf { .. } => return None,
        }
    }
    Some(node)
}

/// Samples reaching the node at `path`.
fn idx_at(root: &TreeNode, data: &TreeData, path: &[bool]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..data.n()).collect();
    let mut node = root;
    for &go_right in path {
        if let TreeNode::Internal { split, left, right } = node {
            let (l, r) = data.partition(&idx, split);
            if go_right {
                idx = r;
                node = right;
            } else {
                idx = l;
                node = left;
            }
        }
    }
    idx
}

/// Per-leaf target aggregates for one side of a candidate split. Losses are
/// pure functions of these integer counts, so sweep evaluations agree with
/// full recomputation.
enum SideAggregates {
    Class { pos: Vec<u64>, n: Vec<u64> },
    Survival { deaths: Vec<u64>, time: Vec<u64>, n: Vec<u64> },
}

impl SideAggregates {
    fn new(target: &Target, n_leaves: usize) -> Self {
        match target {
            Target::Class(_) => SideAggregates::Class {
                pos: vec![0; n_leaves],
                n: vec![0; n_leaves],
            },
            Target::Survival(_) => SideAggregates::Survival {
                deaths: vec![0; n_leaves],
                time: vec![0; n_leaves],
                n: vec![0; n_leaves],
            },
        }
    }

    fn add(&mut self, leaf: usize, target: &Target, sample: usize, sign: i64) {
        match (self, target) {
            (SideAggregates::Class { pos, n }, Target::Class(labels)) => {
                n[leaf] = n[leaf].wrapping_add_signed(sign);
                if labels[sample] {
                    pos[leaf] = pos[leaf].wrapping_add_signed(sign);
                }
            }
            (SideAggregates::Survival { deaths, time, n }, Target::Survival(samples)) => {
                let (t, e) = samples[sample];
                n[leaf] = n[leaf].wrapping_add_signed(sign);
                time[leaf] = time[leaf].wrapping_add_signed(sign * t as i64);
                if e {
                    deaths[leaf] = deaths[leaf].wrapping_add_signed(sign);
                }
            }
            _ => unreachable!("aggregate kind matches target kind"),
        }
    }

    fn loss(&self, n_total: usize) -> f64 {
        match self {
            SideAggregates::Class { pos, n } => {
                let mut miscount = 0u64;
                for (&p, &c) in pos.iter().zip(n) {
                    miscount += class_leaf_miscount(p, c);
                }
                miscount as f64 / n_total as f64
            }
            SideAggregates::Survival { deaths, time, .. } => {
                let mut total = 0.0;
                for (&d, &t) in deaths.iter().zip(time) {
                    total += survival_leaf_deviance(d, t);
                }
                total
            }
        }
    }

    fn min_leaf_count(&self) -> u64 {
        match self {
            SideAggregates::Class { n, .. } | SideAggregates::Survival { n, .. } => {
                n.iter().copied().min().unwrap_or(0)
            }
        }
    }
}

struct ReplaceCandidate {
    split: SplitRule,
    subtree_loss: f64,
}

/// Best alternative split at a node given its fixed subtree shape: every
/// sample's destination leaf under each side is precomputed, and the sweep
/// moves samples between sides while tracking per-leaf aggregates.
fn best_replacement(
    data: &TreeData,
    idx: &[usize],
    left_tree: &TreeNode,
    right_tree: &TreeNode,
    min_samples_leaf: u32,
) -> Option<ReplaceCandidate> {
    let n_total = data.n();
    let leaf_of_left: Vec<usize> = idx.iter().map(|&i| data.route_to_leaf(left_tree, i)).collect();
    let leaf_of_right: Vec<usize> =
        idx.iter().map(|&i| data.route_to_leaf(right_tree, i)).collect();

    let mut best: Option<ReplaceCandidate> = None;
    for feature in 0..data.n_features() {
        let mut present: Vec<(f64, usize)> = Vec::new(); // (value, position in idx)
        let mut missing: Vec<usize> = Vec::new();
        for (pos, &i) in idx.iter().enumerate() {
            match data.value(i, feature) {
                Some(v) => present.push((v, pos)),
                None => missing.push(pos),
            }
        }
        present.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if present.len() < 2 || present.first().map(|p| p.0) == present.last().map(|p| p.0) {
            continue;
        }

        for missing_left in [false, true] {
            if missing_left && missing.is_empty() {
                break;
            }
            let mut agg_left = SideAggregates::new(&data.target, left_tree.n_leaves());
            let mut agg_right = SideAggregates::new(&data.target, right_tree.n_leaves());
            let mut left_n = 0u64;
            for (pos, &i) in idx.iter().enumerate() {
                agg_right.add(leaf_of_right[pos], &data.target, i, 1);
            }
            if missing_left {
                for &pos in &missing {
                    let i = idx[pos];
                    agg_right.add(leaf_of_right[pos], &data.target, i, -1);
                    agg_left.add(leaf_of_left[pos], &data.target, i, 1);
                    left_n += 1;
                }
            }
            for w in 0..present.len() - 1 {
                let (value, pos) = present[w];
                let i = idx[pos];
                agg_right.add(leaf_of_right[pos], &data.target, i, -1);
                agg_left.add(leaf_of_left[pos], &data.target, i, 1);
                left_n += 1;
                let next = present[w + 1].0;
                if next == value {
                    continue;
                }
                if left_n < min_samples_leaf as u64
                    || (idx.len() as u64 - left_n) < min_samples_leaf as u64
                    || agg_left.min_leaf_count() < min_samples_leaf as u64
                    || agg_right.min_leaf_count() < min_samples_leaf as u64
                {
                    continue;
                }
                let loss = agg_left.loss(n_total) + agg_right.loss(n_total);
                let threshold = split_threshold(value, next);
                let replace = match &best {
                    None => true,
                    Some(b) => {
                        loss < b.subtree_loss
                            || (loss == b.subtree_loss && threshold < b.split.threshold)
                    }
                };
                if replace {
                    best = Some(ReplaceCandidate {
                        split: SplitRule { feature, threshold, missing_goes_left: missing_left },
                        subtree_loss: loss,
                    });
                }
            }
        }
    }
    best
}

/// Local search returning the refined tree plus the objective value after
/// each accepted move (first entry is the starting objective).
pub fn local_search_traced(
    mut tree: Tree,
    data: &TreeData,
    config: &TrainConfig,
) -> (Tree, Vec<f64>) {
    let cp = config.complexity;
    let rmst_horizon = tree.rmst_horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut current = tree_objective(&tree, data, cp);
    let mut trace = vec![current];

    for _round in 0..config.local_search_rounds {
        let mut paths = Vec::new();
        internal_paths(&tree.root, &mut Vec::new(), &mut paths);
        if paths.is_empty() {
            break;
        }
        paths.shuffle(&mut rng);

        let mut improved = false;
        for path in paths {
            // The node may have been collapsed away by an earlier move.
            let Some(node) = node_at(&tree.root, &path) else { continue };
            if node.is_leaf() {
                continue;
            }
            let idx = idx_at(&tree.root, data, &path);
            let subtree_obj = node_objective(node, data, &idx, data.n(), cp);
            let rest = current - subtree_obj;

            // Candidate: collapse to a leaf.
            let collapse_est = rest + leaf_loss(data, &idx, data.n());

            // Candidate: best alternative split with the subtree shape fixed.
            let (subtree_splits, replacement) = match node {
                TreeNode::Internal { left, right, .. } => (
                    node.n_splits(),
                    best_replacement(data, &idx, left, right, config.min_samples_leaf),
                ),
                TreeNode::Leaf { .. } => unreachable!(),
            };
            let replace_est = replacement
                .as_ref()
                .map(|r| rest + r.subtree_loss + cp * subtree_splits as f64);

            enum Move {
                Collapse,
                Replace(SplitRule),
            }
            let mut chosen: Option<(f64, Move)> = None;
            if collapse_est < current {
                chosen = Some((collapse_est, Move::Collapse));
            }
            if let (Some(est), Some(r)) = (replace_est, replacement) {
                if est < current && chosen.as_ref().map_or(true, |(best, _)| est < *best) {
                    chosen = Some((est, Move::Replace(r.split)));
                }
            }
            let Some((_, mv)) = chosen else { continue };

            // Apply, then gate on the fully recomputed objective so the
            // accepted trace is strictly decreasing under one consistent
            // evaluation.
            let node = node_at_mut(&mut tree.root, &path).expect("path is valid");
            let saved = node.clone();
            match mv {
                Move::Collapse => {
                    *node = TreeNode::Leaf { payload: make_leaf(data, &idx, rmst_horizon) };
                }
                Move::Replace(rule) => {
                    if let TreeNode::Internal { split, .. } = node {
                        *split = rule;
                    }
                }
            }
            let new_total = tree_objective(&tree, data, cp);
            if new_total < current {
                current = new_total;
                trace.push(current);
                improved = true;
            } else {
                let node = node_at_mut(&mut tree.root, &path).expect("path is valid");
                *node = saved;
            }
        }
        if !improved {
            break;
        }
    }

    let idx: Vec<usize> = (0..data.n()).collect();
    refit_payloads(&mut tree.root, data, &idx, rmst_horizon);
    (tree, trace)
}

/// Seeded coordinate-descent refinement; the returned tree's objective is
/// never worse than the input's.
pub fn local_search(tree: Tree, data: &TreeData, config: &TrainConfig) -> Tree {
    local_search_traced(tree, data, config).0
}

fn prune_node(
    node: TreeNode,
    data: &TreeData,
    idx: Vec<usize>,
    cp: f64,
    rmst_horizon: u32,
) -> (TreeNode, f64) {
    match node {
        TreeNode::Leaf { .. } => {
            let loss = leaf_loss(data, &idx, data.n());
            (node, loss)
        }
        TreeNode::Internal { split, left, right } => {
            let (left_idx, right_idx) = data.partition(&idx, &split);
            let (left, left_obj) = prune_node(*left, data, left_idx, cp, rmst_horizon);
            let (right, right_obj) = prune_node(*right, data, right_idx, cp, rmst_horizon);
            let subtree_obj = cp + left_obj + right_obj;
            let collapse_loss = leaf_loss(data, &idx, data.n());
            if collapse_loss <= subtree_obj {
                (TreeNode::Leaf { payload: make_leaf(data, &idx, rmst_horizon) }, collapse_loss)
            } else {
                (
                    TreeNode::Internal { split, left: Box::new(left), right: Box::new(right) },
                    subtree_obj,
                )
            }
        }
    }
}

/// Bottom-up collapse of every internal node whose collapse does not
/// increase the objective at the given cp.
pub fn prune(tree: Tree, data: &TreeData, cp: f64) -> Tree {
    let idx: Vec<usize> = (0..data.n()).collect();
    let rmst_horizon = tree.rmst_horizon;
    let (root, _) = prune_node(tree.root, data, idx, cp, rmst_horizon);
    Tree { root, ..tree }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::grow_greedy;

    /// XOR on features 0 and 1 plus a noisy label copy in feature 2. Greedy
    /// picks the noisy feature at the root; a depth-2 tree on the XOR pair is
    /// perfect.
    pub(crate) fn xor_with_decoy() -> TreeData {
        let mut columns = vec![Vec::new(), Vec::new(), Vec::new()];
        let mut labels = Vec::new();
        let mut flips_pos = 0;
        let mut flips_neg = 0;
        for x1 in 0..2 {
            for x2 in 0..2 {
                let label = (x1 ^ x2) == 1;
                for _ in 0..10 {
                    columns[0].push(Some(x1 as f64));
                    columns[1].push(Some(x2 as f64));
                    // Flip four decoy values per class, all inside one cell,
                    // so the child splits have strictly positive gain.
                    let flipped = if label {
                        let f = (x1, x2) == (0, 1) && flips_pos < 4;
                        flips_pos += f as usize;
                        f
                    } else {
                        let f = (x1, x2) == (0, 0) && flips_neg < 4;
                        flips_neg += f as usize;
                        f
                    };
                    let decoy = label != flipped;
                    columns[2].push(Some(decoy as u8 as f64));
                    labels.push(label);
                }
            }
        }
        TreeData::new(columns, Target::Class(labels))
    }

    fn xor_config(seed: u64) -> TrainConfig {
        TrainConfig {
            max_depth: 2,
            min_samples_leaf: 1,
            complexity: 0.0,
            local_search_rounds: 20,
            seed,
        }
    }

    #[test]
    fn local_search_fixes_greedy_xor_root() {
        let data = xor_with_decoy();
        for seed in 0..5 {
            let config = xor_config(seed);
            let greedy = grow_greedy(&data, &config).unwrap();
            let greedy_obj = tree_objective(&greedy, &data, 0.0);
            assert!(greedy_obj > 0.0, "greedy must be fooled by the decoy");

            let (refined, trace) = local_search_traced(greedy, &data, &config);
            let refined_obj = tree_objective(&refined, &data, 0.0);
            assert!(refined_obj < greedy_obj);
            assert_eq!(refined_obj, 0.0, "depth-2 XOR tree is perfect");
            for w in trace.windows(2) {
                assert!(w[1] < w[0], "trace must strictly decrease: {trace:?}");
            }
        }
    }

    #[test]
    fn optimal_tree_is_returned_unchanged() {
        let data = xor_with_decoy();
        let config = xor_config(3);
        let greedy = grow_greedy(&data, &config).unwrap();
        let refined = local_search(greedy, &data, &config);
        let again = local_search(refined.clone(), &data, &config);
        assert_eq!(refined, again);
    }

    #[test]
    fn huge_cp_prunes_to_single_leaf() {
        let data = xor_with_decoy();
        let config = xor_config(1);
        let tree = grow_greedy(&data, &config).unwrap();
        let pruned = prune(tree, &data, 1e9);
        assert!(pruned.root.is_leaf());
    }

    #[test]
    fn zero_cp_keeps_strictly_gaining_splits() {
        let data = xor_with_decoy();
        let config = xor_config(1);
        let tree = local_search(grow_greedy(&data, &config).unwrap(), &data, &config);
        let splits = tree.root.n_splits();
        let pruned = prune(tree, &data, 0.0);
        assert_eq!(pruned.root.n_splits(), splits);
    }
}
