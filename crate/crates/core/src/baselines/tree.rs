//! CART-style regression tree: greedy top-down induction maximizing variance
//! reduction, thresholds at midpoints between consecutive distinct sorted
//! values, ties broken by (lowest feature index, lowest threshold).

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_DEPTH: usize = 10;
pub const DEFAULT_MIN_SAMPLES_SPLIT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            min_samples_split: DEFAULT_MIN_SAMPLES_SPLIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
        n: usize,
    },
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub params: TreeParams,
    /// Node 0 is the root; children refer to indices in this arena.
    pub nodes: Vec<Node>,
}

impl TreeModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value, .. } => return *value,
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict(&self, design: &Array2<f64>) -> Result<Array1<f64>> {
        let mut out = Array1::<f64>::zeros(design.nrows());
        for (r, mut row) in design.rows().into_iter().enumerate() {
            let slice = row
                .as_slice()
                .map(|s| s.to_vec())
                .unwrap_or_else(|| row.iter().copied().collect());
            let _ = &mut row;
            out[r] = self.predict_row(&slice);
        }
        Ok(out)
    }

    pub fn depth(&self) -> usize {
        fn depth_of(nodes: &[Node], idx: usize) -> usize {
            match &nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => {
                    1 + depth_of(nodes, *left).max(depth_of(nodes, *right))
                }
            }
        }
        depth_of(&self.nodes, 0)
    }

    /// Human-readable rule listing, one line per node.
    pub fn to_rules(&self) -> String {
        fn walk(nodes: &[Node], idx: usize, indent: usize, out: &mut String) {
            let pad = "  ".repeat(indent);
            match &nodes[idx] {
                Node::Leaf { value, n } => {
                    out.push_str(&format!("{pad}predict {value} (n={n})\n"));
                }
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    n,
                } => {
                    out.push_str(&format!("{pad}if x[{feature}] <= {threshold} (n={n}):\n"));
                    walk(nodes, *left, indent + 1, out);
                    out.push_str(&format!("{pad}else:\n"));
                    walk(nodes, *right, indent + 1, out);
                }
            }
        }
        let mut out = String::new();
        walk(&self.nodes, 0, 0, &mut out);
        out
    }
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
}

/// Canonical SSE of a row subset: two-pass mean-centered sum accumulated in
/// the given (ascending row index) order. Split comparisons bottom out in
/// this deterministic form, so exactly tied candidates - different features
/// inducing the same partition at small nodes - compare equal and resolve by
/// the (lowest feature, lowest threshold) rule.
fn canonical_sse(targets: &Array1<f64>, rows: &[usize]) -> f64 {
    let mean = rows.iter().map(|&r| targets[r]).sum::<f64>() / rows.len() as f64;
    rows.iter()
        .map(|&r| {
            let d = targets[r] - mean;
            d * d
        })
        .sum()
}

/// Best split over all features and all midpoints between consecutive
/// distinct sorted values, by SSE reduction. A prefix-sum pass screens
/// candidates; those within a small margin of the best are re-scored with
/// `canonical_sse` for an exact, order-stable comparison. `rows` must be
/// ascending.
fn best_split(design: &Array2<f64>, targets: &Array1<f64>, rows: &[usize]) -> Option<SplitChoice> {
    let n = rows.len();
    let total_sum: f64 = rows.iter().map(|&r| targets[r]).sum();
    let total_sq: f64 = rows.iter().map(|&r| targets[r] * targets[r]).sum();
    let parent_sse_fast = total_sq - total_sum * total_sum / n as f64;

    struct Candidate {
        feature: usize,
        threshold: f64,
        reduction_fast: f64,
    }

    let mut candidates: Vec<Candidate> = Vec::new();
    let mut best_fast = f64::NEG_INFINITY;
    for feature in 0..design.ncols() {
        let mut order: Vec<usize> = rows.to_vec();
        order.sort_by(|&a, &b| {
            design[[a, feature]]
                .partial_cmp(&design[[b, feature]])
                .expect("finite feature values")
        });
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for i in 0..n - 1 {
            let r = order[i];
            left_sum += targets[r];
            left_sq += targets[r] * targets[r];
            let here = design[[r, feature]];
            let next = design[[order[i + 1], feature]];
            if here == next {
                continue;
            }
            let left_n = (i + 1) as f64;
            let right_n = (n - i - 1) as f64;
            let right_sum = total_sum - left_sum;
            let right_sq = total_sq - left_sq;
            let sse = (left_sq - left_sum * left_sum / left_n)
                + (right_sq - right_sum * right_sum / right_n);
            let reduction_fast = parent_sse_fast - sse;
            best_fast = best_fast.max(reduction_fast);
            candidates.push(Candidate {
                feature,
                threshold: (here + next) / 2.0,
                reduction_fast,
            });
        }
    }
    if candidates.is_empty() {
        return None;
    }

    // Exact re-scoring of everything near the fast winner. The margin is far
    // above prefix-sum rounding, so the canonical winner is always inside.
    let margin = 1e-9 * parent_sse_fast.abs().max(1.0);
    let parent_sse = canonical_sse(targets, rows);
    let mut best: Option<(SplitChoice, f64)> = None;
    for c in candidates {
        if c.reduction_fast < best_fast - margin {
            continue;
        }
        let left: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&r| design[[r, c.feature]] <= c.threshold)
            .collect();
        let right: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&r| design[[r, c.feature]] > c.threshold)
            .collect();
        let reduction =
            parent_sse - canonical_sse(targets, &left) - canonical_sse(targets, &right);
        // Candidates arrive in (feature asc, threshold asc) order; strict
        // improvement keeps the first of an exact tie.
        if best.as_ref().is_none_or(|(_, r)| reduction > *r) {
            best = Some((
                SplitChoice {
                    feature: c.feature,
                    threshold: c.threshold,
                },
                reduction,
            ));
        }
    }
    best.filter(|(_, r)| *r > 0.0).map(|(choice, _)| choice)
}

fn grow(
    design: &Array2<f64>,
    targets: &Array1<f64>,
    rows: Vec<usize>,
    depth: usize,
    params: &TreeParams,
    nodes: &mut Vec<Node>,
) -> usize {
    let n = rows.len();
    let mean = rows.iter().map(|&r| targets[r]).sum::<f64>() / n as f64;
    let pure = rows
        .iter()
        .all(|&r| targets[r] == targets[rows[0]]);

    if depth >= params.max_depth || n < params.min_samples_split || pure {
        nodes.push(Node::Leaf { value: mean, n });
        return nodes.len() - 1;
    }
    let Some(split) = best_split(design, targets, &rows) else {
        nodes.push(Node::Leaf { value: mean, n });
        return nodes.len() - 1;
    };
    let left_rows: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&r| design[[r, split.feature]] <= split.threshold)
        .collect();
    let right_rows: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&r| design[[r, split.feature]] > split.threshold)
        .collect();

    let idx = nodes.len();
    nodes.push(Node::Leaf { value: mean, n }); // placeholder until children exist
    let left = grow(design, targets, left_rows, depth + 1, params, nodes);
    let right = grow(design, targets, right_rows, depth + 1, params, nodes);
    nodes[idx] = Node::Internal {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
        n,
    };
    idx
}

/// Greedy top-down induction. Leaves predict the mean of their training
/// targets; recursion stops at max depth, pure nodes, nodes smaller than
/// `min_samples_split`, or when no split reduces the SSE.
pub fn fit_regression_tree(
    design: &Array2<f64>,
    targets: &Array1<f64>,
    params: &TreeParams,
) -> Result<TreeModel> {
    if design.nrows() == 0 || design.ncols() == 0 {
        return Err(Error::InvalidData("empty design".into()));
    }
    if design.nrows() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows vs {} targets",
            design.nrows(),
            targets.len()
        )));
    }
    if params.min_samples_split < 2 {
        return Err(Error::InvalidConfig("min_samples_split must be >= 2".into()));
    }
    let mut nodes = Vec::new();
    grow(
        design,
        targets,
        (0..design.nrows()).collect(),
        0,
        params,
        &mut nodes,
    );
    Ok(TreeModel {
        params: *params,
        nodes,
    })
}
