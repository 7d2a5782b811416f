//! Interpretable hard-drive reliability modeling from daily SMART telemetry.
//!
//! The crate covers the full path from raw snapshot CSVs to applied models:
//!
//! - [`telemetry`]: streaming ingestion and validation of Backblaze-format
//!   drive-day snapshot files (plain or gzip).
//! - [`dataset`]: turning per-day snapshots into censored survival samples or
//!   horizon-labeled classification samples, with serial-level train/test
//!   splitting.
//! - [`survival`]: Kaplan-Meier estimation, restricted mean survival, and the
//!   two-sample log-rank statistic.
//! - [`tree`]: binary decision trees for both target types, trained greedily
//!   and refined by seeded local search, with variable-importance summaries.
//! - [`eval`]: ROC curves, AUC, and confusion-matrix reports at fixed alert
//!   horizons.
//! - [`synth`]: synthetic fleets with planted hazard rules, for ground-truth
//!   recovery tests.
//! - [`export`]: Graphviz and CSV renderings of trained models.

pub mod dataset;
pub mod eval;
pub mod export;
pub mod survival;
pub mod synth;
pub mod telemetry;
pub mod tree;

pub use dataset::{
    build_classification_dataset, build_survival_dataset, default_catalog, split_by_serial,
    ClassSample, FeatureCatalog, FeatureVector, SurvivalSample,
};
pub use eval::{auc, confusion_at, horizon_label, roc_curve, select_threshold, ScoredSet};
pub use survival::{kaplan_meier, log_rank, restricted_mean_survival, survival_at, KMCurve};
pub use telemetry::{DriveDaySnapshot, SmartKey, SmartKind};
pub use tree::{fit, grow_greedy, local_search, Tree, TrainConfig, TreeKind};
