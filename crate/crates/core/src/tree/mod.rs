//! Binary axis-aligned decision trees for classification (failure within a
//! horizon) and censored survival, trained by greedy induction plus seeded
//! coordinate-descent local search over split nodes.

mod grow;
mod importance;
mod search;
mod split;

pub use grow::grow_greedy;
pub use importance::{aggregate_importance, variable_importance};
pub use search::{local_search, local_search_traced, prune};
pub use split::{best_split, gini_gain, split_threshold, SplitCandidate, SplitCriterion};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassSample, FeatureVector, SurvivalSample};
use crate::survival::{kaplan_meier, restricted_mean_survival, KMCurve};

/// Axis-aligned split: samples with `value < threshold` go left; masked
/// values follow `missing_goes_left`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub feature: usize,
    pub threshold: f64,
    pub missing_goes_left: bool,
}

impl SplitRule {
    /// Which way a (possibly missing) value goes.
    pub fn goes_left(&self, value: Option<f64>) -> bool {
        match value {
            Some(v) => v < self.threshold,
            None => self.missing_goes_left,
        }
    }
}

/// Classification leaf: class counts and the failure probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLeaf {
    pub n_samples: u32,
    pub positive_count: u32,
    pub probability: f64,
}

/// Survival leaf: the leaf KM curve plus its restricted-mean expected
/// survival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLeaf {
    pub n_samples: u32,
    pub km: KMCurve,
    pub expected_survival_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LeafPayload {
    Class(ClassLeaf),
    Survival(SurvivalLeaf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Internal {
        split: SplitRule,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        payload: LeafPayload,
    },
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    /// Number of internal nodes (splits) in this subtree.
    pub fn n_splits(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.n_splits() + right.n_splits(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn depth(&self) -> u32 {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Leaves in preorder.
    pub fn leaves(&self) -> Vec<&LeafPayload> {
        let mut out = Vec::new();
        fn walk<'a>(node: &'a TreeNode, out: &mut Vec<&'a LeafPayload>) {
            match node {
                TreeNode::Leaf { payload } => out.push(payload),
                TreeNode::Internal { left, right, .. } => {
                    walk(left, out);
                    walk(right, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeKind {
    Classification,
    Survival,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_depth: u32,
    pub min_samples_leaf: u32,
    /// Per-split penalty (cp) in the global objective.
    pub complexity: f64,
    pub local_search_rounds: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_depth: 5,
            min_samples_leaf: 100,
            complexity: 0.0,
            local_search_rounds: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dimension mismatch: tree expects {expected} features, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature vector length {got} does not match dataset width {expected}")]
    InconsistentFeatures { expected: usize, got: usize },
}

/// A trained tree plus the metadata needed to apply and re-export it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub kind: TreeKind,
    pub root: TreeNode,
    pub n_features: usize,
    /// RMST horizon used for leaf expected-survival values: the maximum
    /// observed duration in the training data. Zero for classification.
    pub rmst_horizon: u32,
    pub config: TrainConfig,
}

impl Tree {
    /// Route a feature vector to its leaf payload.
    pub fn predict(&self, x: &FeatureVector) -> Result<&LeafPayload, TreeError> {
        if x.len() != self.n_features {
            return Err(TreeError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut node = &self.root;
        while let TreeNode::Internal { split, left, right } = node {
            node = if split.goes_left(x.get(split.feature)) { left } else { right };
        }
        match node {
            TreeNode::Leaf { payload } => Ok(payload),
            TreeNode::Internal { .. } => unreachable!(),
        }
    }

    /// Predicted failure probability: leaf probability for classification
    /// trees, `1 - S(horizon)` for survival trees.
    pub fn failure_score(&self, x: &FeatureVector, horizon_days: u32) -> Result<f64, TreeError> {
        Ok(match self.predict(x)? {
            LeafPayload::Class(leaf) => leaf.probability,
            LeafPayload::Survival(leaf) => 1.0 - crate::survival::survival_at(&leaf.km, horizon_days),
        })
    }
}

/// Targets of a training dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(Vec<bool>),
    Survival(Vec<(u32, bool)>),
}

/// Column-major training matrix: `columns[f][i]` is feature `f` of sample
/// `i`, `None` when masked.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeData {
    pub columns: Vec<Vec<Option<f64>>>,
    pub target: Target,
    n: usize,
}

impl TreeData {
    pub fn new(columns: Vec<Vec<Option<f64>>>, target: Target) -> Self {
        let n = match &target {
            Target::Class(labels) => labels.len(),
            Target::Survival(samples) => samples.len(),
        };
        for col in &columns {
            assert_eq!(col.len(), n, "column length must match target length");
        }
        TreeData { columns, target, n }
    }

    pub fn from_class_samples(samples: &[ClassSample]) -> Result<Self, TreeError> {
        let labels = samples.iter().map(|s| s.label).collect();
        let columns = columns_from_features(samples.iter().map(|s| &s.features))?;
        Ok(TreeData::new(columns, Target::Class(labels)))
    }

    pub fn from_survival_samples(samples: &[SurvivalSample]) -> Result<Self, TreeError> {
        let durations = samples.iter().map(|s| (s.duration_days, s.event)).collect();
        let columns = columns_from_features(samples.iter().map(|s| &s.features))?;
        Ok(TreeData::new(columns, Target::Survival(durations)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn value(&self, sample: usize, feature: usize) -> Option<f64> {
        self.columns[feature][sample]
    }

    pub fn kind(&self) -> TreeKind {
        match self.target {
            Target::Class(_) => TreeKind::Classification,
            Target::Survival(_) => TreeKind::Survival,
        }
    }

    pub fn criterion(&self) -> SplitCriterion {
        match self.target {
            Target::Class(_) => SplitCriterion::Gini,
            Target::Survival(_) => SplitCriterion::LogRank,
        }
    }

    /// Maximum observed duration; the RMST horizon for leaf summaries.
    pub fn max_duration(&self) -> u32 {
        match &self.target {
            Target::Survival(samples) => samples.iter().map(|&(t, _)| t).max().unwrap_or(0),
            Target::Class(_) => 0,
        }
    }

    /// Indices of samples routed into each side of a split.
    pub fn partition(&self, idx: &[usize], split: &SplitRule) -> (Vec<usize>, Vec<usize>) {
        let mut left = Vec::new();
        let mut right = Vec::new();
        for &i in idx {
            if split.goes_left(self.value(i, split.feature)) {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        (left, right)
    }

    /// Route one sample through a subtree, returning the preorder leaf id it
    /// lands in.
    pub fn route_to_leaf(&self, node: &TreeNode, sample: usize) -> usize {
        let mut current = node;
        let mut leaf_id = 0usize;
        loop {
            match current {
                TreeNode::Leaf { .. } => return leaf_id,
                TreeNode::Internal { split, left, right } => {
                    if split.goes_left(self.value(sample, split.feature)) {
                        current = left;
                    } else {
                        leaf_id += left.n_leaves();
                        current = right;
                    }
                }
            }
        }
    }
}

fn columns_from_features<'a, I>(features: I) -> Result<Vec<Vec<Option<f64>>>, TreeError>
where
    I: Iterator<Item = &'a FeatureVector> + Clone,
{
    let mut width = None;
    let mut columns: Vec<Vec<Option<f64>>> = Vec::new();
    for fv in features {
        match width {
            None => {
                width = Some(fv.len());
                columns = vec![Vec::new(); fv.len()];
            }
            Some(w) if w != fv.len() => {
                return Err(TreeError::InconsistentFeatures { expected: w, got: fv.len() })
            }
            _ => {}
        }
        for f in 0..fv.len() {
            columns[f].push(fv.get(f));
        }
    }
    Ok(columns)
}

/// Fit a leaf payload from the samples that reach it.
pub fn make_leaf(data: &TreeData, idx: &[usize], rmst_horizon: u32) -> LeafPayload {
    match &data.target {
        Target::Class(labels) => {
            let n = idx.len() as u32;
            let positive = idx.iter().filter(|&&i| labels[i]).count() as u32;
            LeafPayload::Class(ClassLeaf {
                n_samples: n,
                positive_count: positive,
                probability: if n == 0 { 0.0 } else { positive as f64 / n as f64 },
            })
        }
        Target::Survival(samples) => {
            let leaf_samples: Vec<(u32, bool)> = idx.iter().map(|&i| samples[i]).collect();
            let km = kaplan_meier(&leaf_samples).expect("leaf must hold at least one sample");
            let expected = restricted_mean_survival(&km, rmst_horizon.max(1));
            LeafPayload::Survival(SurvivalLeaf {
                n_samples: idx.len() as u32,
                km,
                expected_survival_days: expected,
            })
        }
    }
}

/// Leaf loss in objective units, computed from integer aggregates so that
/// incremental sweeps and full recomputation agree bit-for-bit.
pub(crate) fn class_leaf_miscount(positive: u64, n: u64) -> u64 {
    positive.min(n - positive)
}

/// Exponential-model deviance of one survival leaf: `-(D ln lambda - lambda T)`
/// with `lambda = D / T`; zero-event leaves use the `(D + 0.5) / T` continuity
/// correction to keep the value finite.
pub(crate) fn survival_leaf_deviance(deaths: u64, total_time: u64) -> f64 {
    if total_time == 0 {
        // No time at risk: degenerate leaf, no information.
        return 0.0;
    }
    let lambda = if deaths == 0 {
        0.5 / total_time as f64
    } else {
        deaths as f64 / total_time as f64
    };
    -(deaths as f64 * lambda.ln() - lambda * total_time as f64)
}

/// Leaf loss (objective units) for the samples in `idx`. Classification
/// losses are normalized by `n_total` so the tree objective matches
/// "misclassification count / n".
pub(crate) fn leaf_loss(data: &TreeData, idx: &[usize], n_total: usize) -> f64 {
    match &data.target {
        Target::Class(labels) => {
            let n = idx.len() as u64;
            let positive = idx.iter().filter(|&&i| labels[i]).count() as u64;
            class_leaf_miscount(positive, n) as f64 / n_total as f64
        }
        Target::Survival(samples) => {
            let mut deaths = 0u64;
            let mut total_time = 0u64;
            for &i in idx {
                let (t, e) = samples[i];
                total_time += t as u64;
                deaths += e as u64;
            }
            survival_leaf_deviance(deaths, total_time)
        }
    }
}

/// Global objective descended by the local search: summed leaf losses plus
/// `cp` per split. Classification leaves score misclassification under the
/// leaf-majority label (normalized by n); survival leaves score exponential
/// deviance.
pub fn tree_objective(tree: &Tree, data: &TreeData, cp: f64) -> f64 {
    let idx: Vec<usize> = (0..data.n()).collect();
    node_objective(&tree.root, data, &idx, data.n(), cp)
}

/// Objective contribution of one subtree over the samples in `idx`.
pub(crate) fn node_objective(
    node: &TreeNode,
    data: &TreeData,
    idx: &[usize],
    n_total: usize,
    cp: f64,
) -> f64 {
    match node {
        TreeNode::Leaf { .. } => leaf_loss(data, idx, n_total),
        TreeNode::Internal { split, left, right } => {
            let (l, r) = data.partition(idx, split);
            cp + node_objective(left, data, &l, n_total, cp)
                + node_objective(right, data, &r, n_total, cp)
        }
    }
}

/// Rebuild every leaf payload from the samples currently routed to it.
pub(crate) fn refit_payloads(node: &mut TreeNode, data: &TreeData, idx: &[usize], rmst_horizon: u32) {
    match node {
        TreeNode::Leaf { payload } => {
            *payload = make_leaf(data, idx, rmst_horizon);
        }
        TreeNode::Internal { split, left, right } => {
            let (l, r) = data.partition(idx, split);
            refit_payloads(left, data, &l, rmst_horizon);
            refit_payloads(right, data, &r, rmst_horizon);
        }
    }
}

/// Grow, locally refine, and prune a tree with the configured cp.
pub fn fit(data: &TreeData, config: &TrainConfig) -> Result<Tree, TreeError> {
    let tree = grow_greedy(data, config)?;
    let tree = local_search(tree, data, config);
    Ok(prune(tree, data, config.complexity))
}

/// Select cp over a grid by validation loss (objective at cp = 0), then
/// return the model fit on the training set at the chosen cp. Ties go to the
/// smaller cp.
pub fn fit_with_cp_grid(
    train: &TreeData,
    validation: &TreeData,
    config: &TrainConfig,
    grid: &[f64],
) -> Result<(Tree, f64), TreeError> {
    let mut best: Option<(f64, f64, Tree)> = None; // (val_loss, cp, tree)
    for &cp in grid {
        let cfg = TrainConfig { complexity: cp, ..config.clone() };
        let tree = fit(train, &cfg)?;
        let val_loss = tree_objective(&tree, validation, 0.0);
        let better = match &best {
            None => true,
            Some((loss, _, _)) => val_loss < *loss,
        };
        if better {
            best = Some((val_loss, cp, tree));
        }
    }
    let (_, cp, tree) = best.ok_or(TreeError::EmptyDataset)?;
    Ok((tree, cp))
}

/// Default cp grid: 0 plus a logarithmic sweep 1e-5 .. 1e-2.
pub const DEFAULT_CP_GRID: [f64; 5] = [0.0, 1e-5, 1e-4, 1e-3, 1e-2];

/// Versioned on-disk form of a trained tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeExport {
    pub schema_version: u32,
    pub kind: TreeKind,
    pub feature_names: Vec<String>,
    pub rmst_horizon: u32,
    pub config: TrainConfig,
    pub root: TreeNode,
}

pub const TREE_SCHEMA_VERSION: u32 = 1;

impl Tree {
    pub fn export(&self, feature_names: Vec<String>) -> TreeExport {
        TreeExport {
            schema_version: TREE_SCHEMA_VERSION,
            kind: self.kind,
            feature_names,
            rmst_horizon: self.rmst_horizon,
            config: self.config.clone(),
            root: self.root.clone(),
        }
    }

    pub fn from_export(export: TreeExport) -> Tree {
        Tree {
            kind: export.kind,
            n_features: export.feature_names.len(),
            rmst_horizon: export.rmst_horizon,
            config: export.config,
            root: export.root,
        }
    }
}

impl TreeExport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree export serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn class_data(rows: &[(&[Option<f64>], bool)]) -> TreeData {
        let p = rows[0].0.len();
        let mut columns = vec![Vec::new(); p];
        let mut labels = Vec::new();
        for (features, label) in rows {
            for (f, v) in features.iter().enumerate() {
                columns[f].push(*v);
            }
            labels.push(*label);
        }
        TreeData::new(columns, Target::Class(labels))
    }

    fn single_leaf_tree(probability: f64) -> Tree {
        Tree {
            kind: TreeKind::Classification,
            root: TreeNode::Leaf {
                payload: LeafPayload::Class(ClassLeaf {
                    n_samples: 10,
                    positive_count: (probability * 10.0) as u32,
                    probability,
                }),
            },
            n_features: 2,
            rmst_horizon: 0,
            config: TrainConfig::default(),
        }
    }

    #[test]
    fn predict_single_leaf() {
        let tree = single_leaf_tree(0.3);
        let x = FeatureVector { values: vec![1.0, 2.0], missing: vec![false, false] };
        match tree.predict(&x).unwrap() {
            LeafPayload::Class(leaf) => assert_eq!(leaf.probability, 0.3),
            _ => panic!("expected class leaf"),
        }
    }

    #[test]
    fn predict_dimension_mismatch() {
        let tree = single_leaf_tree(0.3);
        let x = FeatureVector { values: vec![1.0], missing: vec![false] };
        assert!(matches!(
            tree.predict(&x),
            Err(TreeError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn missing_value_follows_missing_goes_left() {
        let leaf = |p: f64| TreeNode::Leaf {
            payload: LeafPayload::Class(ClassLeaf {
                n_samples: 1,
                positive_count: 0,
                probability: p,
            }),
        };
        let tree = Tree {
            kind: TreeKind::Classification,
            root: TreeNode::Internal {
                split: SplitRule { feature: 0, threshold: 5.0, missing_goes_left: true },
                left: Box::new(leaf(0.1)),
                right: Box::new(leaf(0.9)),
            },
            n_features: 1,
            rmst_horizon: 0,
            config: TrainConfig::default(),
        };
        let masked = FeatureVector { values: vec![0.0], missing: vec![true] };
        match tree.predict(&masked).unwrap() {
            LeafPayload::Class(leaf) => assert_eq!(leaf.probability, 0.1),
            _ => unreachable!(),
        }
    }

    #[test]
    fn objective_counts_cp_per_split() {
        // All-negative labels: both a single leaf and any split fit
        // perfectly, so an extra split costs exactly cp.
        let data = class_data(&[
            (&[Some(1.0)], false),
            (&[Some(2.0)], false),
            (&[Some(3.0)], false),
            (&[Some(4.0)], false),
        ]);
        let leaf = TreeNode::Leaf {
            payload: make_leaf(&data, &[0, 1, 2, 3], 0),
        };
        let single = Tree {
            kind: TreeKind::Classification,
            root: leaf.clone(),
            n_features: 1,
            rmst_horizon: 0,
            config: TrainConfig::default(),
        };
        assert_eq!(tree_objective(&single, &data, 0.01), 0.0);

        let split_tree = Tree {
            root: TreeNode::Internal {
                split: SplitRule { feature: 0, threshold: 2.5, missing_goes_left: false },
                left: Box::new(leaf.clone()),
                right: Box::new(leaf),
            },
            ..single
        };
        let with_cp = tree_objective(&split_tree, &data, 0.01);
        assert!((with_cp - 0.01).abs() < 1e-15);
    }

    #[test]
    fn export_json_round_trip() {
        let tree = single_leaf_tree(0.25);
        let export = tree.export(vec!["smart_5_raw".into(), "smart_5_normalized".into()]);
        let json = export.to_json();
        let back = TreeExport::from_json(&json).unwrap();
        assert_eq!(export, back);
        assert_eq!(Tree::from_export(back), tree);
    }

    #[test]
    fn zero_event_deviance_is_finite() {
        let dev = survival_leaf_deviance(0, 1000);
        assert!(dev.is_finite());
        assert_eq!(survival_leaf_deviance(0, 0), 0.0);
    }
}
