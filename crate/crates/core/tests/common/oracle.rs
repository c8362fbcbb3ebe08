//! Independent reference implementations used to check the library.

use sbr_core::corpus::BugReport;
use sbr_core::forest::{HyperParams, Node, Tree};

/// `s (n - s) / n`, the Gini impurity of a node scaled by `n / 2`.
fn scaled_gini(n: usize, s: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        s as f64 * (n - s) as f64 / n as f64
    }
}

/// Exhaustive search over every feature and every midpoint between
/// consecutive distinct values. Returns the lowest children impurity among
/// splits that respect `min_leaf`.
#[allow(clippy::needless_range_loop)]
pub fn brute_force_best(xs: &[Vec<f64>], ys: &[bool], idx: &[usize], min_leaf: usize) -> Option<f64> {
    let n_features = xs.first().map_or(0, Vec::len);
    let mut best: Option<f64> = None;
    for f in 0..n_features {
        let mut values: Vec<f64> = idx.iter().map(|&i| xs[i][f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (mut nl, mut sl, mut nr, mut sr) = (0, 0, 0, 0);
            for &i in idx {
                if xs[i][f] <= t {
                    nl += 1;
                    sl += ys[i] as usize;
                } else {
                    nr += 1;
                    sr += ys[i] as usize;
                }
            }
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let imp = scaled_gini(nl, sl) + scaled_gini(nr, sr);
            if best.is_none_or(|b| imp < b) {
                best = Some(imp);
            }
        }
    }
    best
}

/// Walks a tree grown without bootstrapping and with every feature
/// inspected, checking each node against the exhaustive search above.
pub fn check_tree(tree: &Tree, xs: &[Vec<f64>], ys: &[bool], p: &HyperParams) -> Result<(), String> {
    let all: Vec<usize> = (0..xs.len()).collect();
    check_node(tree, 0, &all, 0, xs, ys, p)
}

fn check_node(
    tree: &Tree,
    node: usize,
    idx: &[usize],
    depth: usize,
    xs: &[Vec<f64>],
    ys: &[bool],
    p: &HyperParams,
) -> Result<(), String> {
    let n = idx.len();
    let s = idx.iter().filter(|&&i| ys[i]).count();
    let parent = scaled_gini(n, s);
    let must_stop = s == 0
        || s == n
        || n < p.min_samples_split
        || n < 2 * p.min_samples_leaf
        || p.max_depth.is_some_and(|d| depth >= d);
    let best = brute_force_best(xs, ys, idx, p.min_samples_leaf);
    match tree.nodes[node] {
        Node::Leaf { sbr_fraction } => {
            let expected = s as f64 / n as f64;
            if (sbr_fraction - expected).abs() > 1e-12 {
                return Err(format!("leaf {node}: fraction {sbr_fraction}, expected {expected}"));
            }
            if !must_stop {
                if let Some(b) = best {
                    if b < parent * (1.0 - 1e-9) {
                        return Err(format!("leaf {node}: split with impurity {b} < parent {parent} was available"));
                    }
                }
            }
            Ok(())
        }
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            if must_stop {
                return Err(format!("node {node} split although a stopping rule holds"));
            }
            let f = feature as usize;
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| xs[i][f] <= threshold);
            if l.len() < p.min_samples_leaf || r.len() < p.min_samples_leaf {
                return Err(format!("node {node}: child below min_samples_leaf"));
            }
            let below = l.iter().map(|&i| xs[i][f]).fold(f64::NEG_INFINITY, f64::max);
            let above = r.iter().map(|&i| xs[i][f]).fold(f64::INFINITY, f64::min);
            if ((below + above) / 2.0 - threshold).abs() > 1e-12 {
                return Err(format!("node {node}: threshold {threshold} is not the midpoint of {below} and {above}"));
            }
            let imp = scaled_gini(l.len(), l.iter().filter(|&&i| ys[i]).count())
                + scaled_gini(r.len(), r.iter().filter(|&&i| ys[i]).count());
            let b = best.ok_or_else(|| format!("node {node}: split where no valid split exists"))?;
            if (imp - b).abs() > 1e-9 {
                return Err(format!("node {node}: impurity {imp}, best available {b}"));
            }
            if imp >= parent {
                return Err(format!("node {node}: split does not reduce impurity"));
            }
            check_node(tree, left as usize, &l, depth + 1, xs, ys, p)?;
            check_node(tree, right as usize, &r, depth + 1, xs, ys, p)
        }
    }
}

/// Tree prediction written independently of `Tree::predict`.
pub fn walk(tree: &Tree, x: &[f64]) -> f64 {
    let mut i = 0;
    loop {
        match &tree.nodes[i] {
            Node::Leaf { sbr_fraction } => return *sbr_fraction,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let v = x.get(*feature as usize).copied().unwrap_or(0.0);
                i = if v <= *threshold { *left } else { *right } as usize;
            }
        }
    }
}

/// Stable sort by key written as an insertion sort.
pub fn insertion_sorted<K: PartialOrd + Copy>(items: &[(K, BugReport)]) -> Vec<BugReport> {
    let mut out: Vec<(K, BugReport)> = Vec::with_capacity(items.len());
    for (k, r) in items {
        let pos = out.iter().rposition(|(ok, _)| *ok <= *k).map_or(0, |p| p + 1);
        out.insert(pos, (*k, r.clone()));
    }
    out.into_iter().map(|(_, r)| r).collect()
}

/// Metrics from their textbook definitions, with any 0/0 taken as 0.
pub fn hand_metrics(tp: f64, fp: f64, fn_: f64, tn: f64) -> [f64; 5] {
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let recall = div(tp, tp + fn_);
    let precision = div(tp, tp + fp);
    let f1 = div(2.0 * precision * recall, precision + recall);
    let fpr = div(fp, fp + tn);
    let g = div(2.0 * recall * (1.0 - fpr), recall + (1.0 - fpr));
    [recall, precision, f1, fpr, g]
}
