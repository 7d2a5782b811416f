//! Human-readable exports: Graphviz DOT rendering of trained trees and CSV
//! dumps of Kaplan-Meier curves.

use std::io::{self, Write};

use crate::survival::KMCurve;
use crate::tree::{LeafPayload, Tree, TreeNode};

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Statistic driving leaf shading, darker = larger: failure probability for
/// classification leaves, expected survival for survival leaves (so the
/// longest-lived leaf is darkest).
fn leaf_stat(payload: &LeafPayload) -> f64 {
    match payload {
        LeafPayload::Class(leaf) => leaf.probability,
        LeafPayload::Survival(leaf) => leaf.expected_survival_days,
    }
}

fn leaf_label(payload: &LeafPayload) -> String {
    match payload {
        LeafPayload::Class(leaf) => format!(
            "n = {}\\nP(fail) = {:.3}",
            leaf.n_samples, leaf.probability
        ),
        LeafPayload::Survival(leaf) => format!(
            "n = {}\\nE[survival] = {:.1} d",
            leaf.n_samples, leaf.expected_survival_days
        ),
    }
}

/// Grayscale fill for a statistic within `[min, max]`: white at the minimum,
/// dark gray at the maximum.
fn stat_fill(stat: f64, min: f64, max: f64) -> String {
    let t = if max > min { (stat - min) / (max - min) } else { 0.0 };
    // Keep the darkest shade readable with black text.
    let level = (255.0 - t * 130.0).round() as u8;
    format!("#{level:02x}{level:02x}{level:02x}")
}

/// Render a tree as Graphviz DOT. Internal nodes show the split rule and
/// where masked values route; leaves show their summary, shaded darker the
/// larger their statistic (failure probability, or expected survival).
pub fn tree_to_dot(tree: &Tree, feature_names: &[String]) -> String {
    let leaves = tree.root.leaves();
    let stats: Vec<f64> = leaves.iter().map(|p| leaf_stat(p)).collect();
    let min = stats.iter().copied().fold(f64::INFINITY, f64::min);
    let max = stats.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut out = String::from("digraph tree {\n  node [fontname=\"Helvetica\"];\n");
    let mut next_id = 0usize;
    fn walk(
        node: &TreeNode,
        out: &mut String,
        next_id: &mut usize,
        feature_names: &[String],
        min: f64,
        max: f64,
    ) -> usize {
        let id = *next_id;
        *next_id += 1;
        match node {
            TreeNode::Leaf { payload } => {
                out.push_str(&format!(
                    "  n{id} [shape=box, style=filled, fillcolor=\"{}\", label=\"{}\"];\n",
                    stat_fill(leaf_stat(payload), min, max),
                    leaf_label(payload)
                ));
            }
            TreeNode::Internal { split, left, right } => {
                let name = feature_names
                    .get(split.feature)
                    .map(|s| escape(s))
                    .unwrap_or_else(|| format!("x{}", split.feature));
                out.push_str(&format!(
                    "  n{id} [shape=ellipse, label=\"{name} < {}\\nmissing: {}\"];\n",
                    split.threshold,
                    if split.missing_goes_left { "left" } else { "right" }
                ));
                let l = walk(left, out, next_id, feature_names, min, max);
                out.push_str(&format!("  n{id} -> n{l} [label=\"yes\"];\n"));
                let r = walk(right, out, next_id, feature_names, min, max);
                out.push_str(&format!("  n{id} -> n{r} [label=\"no\"];\n"));
            }
        }
        id
    }
    walk(&tree.root, &mut out, &mut next_id, feature_names, min, max);
    out.push_str("}\n");
    out
}

/// Write one Kaplan-Meier curve as CSV: `time,survival,at_risk,deaths`.
pub fn write_km_csv<W: Write>(mut writer: W, curve: &KMCurve) -> io::Result<()> {
    writeln!(writer, "time,survival,at_risk,deaths")?;
    for i in 0..curve.times.len() {
        writeln!(
            writer,
            "{},{},{},{}",
            curve.times[i], curve.survival[i], curve.at_risk[i], curve.deaths[i]
        )?;
    }
    Ok(())
}

/// Write the KM curve of every survival leaf, tagged by preorder leaf id:
/// `leaf,time,survival,at_risk,deaths`. Classification trees produce only the
/// header.
pub fn write_leaf_km_csv<W: Write>(mut writer: W, tree: &Tree) -> io::Result<()> {
    writeln!(writer, "leaf,time,survival,at_risk,deaths")?;
    for (leaf_id, payload) in tree.root.leaves().iter().enumerate() {
        if let LeafPayload::Survival(leaf) = payload {
            for i in 0..leaf.km.times.len() {
                writeln!(
                    writer,
                    "{},{},{},{},{}",
                    leaf_id, leaf.km.times[i], leaf.km.survival[i], leaf.km.at_risk[i],
                    leaf.km.deaths[i]
                )?;
            }
        }
    }
    Ok(())
}
