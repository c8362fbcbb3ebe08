//! Random forest of CART trees over sparse feature vectors.
//!
//! Each tree is grown on a bootstrap sample (n draws with replacement,
//! represented as per-sample multiplicities, unless bootstrapping is turned
//! off) with Gini impurity as the split criterion. At every node a random subset of `max_features` features is
//! inspected; if all of them are constant on the node, more features are
//! drawn until a non-constant one has been seen or none remain. Candidate
//! thresholds are midpoints between consecutive distinct values, and a sample
//! goes left when its value is `<= threshold`. Absent sparse entries are 0.
//!
//! Every tree has its own RNG derived from `(seed, tree_index)`, so the
//! trained model does not depend on how many threads built it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

pub const MODEL_FORMAT: &str = "sbr-forest";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    /// `max(1, floor(fraction * n_features))`.
    Fraction(f64),
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(&self, n_features: usize) -> usize {
        let k = match *self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::Fraction(f) => (f * n_features as f64).floor() as usize,
            MaxFeatures::Count(c) => c,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub n_trees: usize,
    /// `None` grows trees until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    /// Grow each tree on a bootstrap sample; otherwise on every sample once.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: bool,
}

fn default_bootstrap() -> bool {
    true
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_trees == 0 {
            return bad("n_trees must be at least 1");
        }
        if self.min_samples_split < 2 {
            return bad("min_samples_split must be at least 2");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1");
        }
        if self.max_depth == Some(0) {
            return bad("max_depth must be at least 1 when bounded");
        }
        match self.max_features {
            MaxFeatures::Fraction(f) if !(f > 0.0 && f <= 1.0) => bad("max_features fraction must lie in (0, 1]"),
            MaxFeatures::Count(0) => bad("max_features count must be at least 1"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        /// Bootstrap-weighted fraction of SBRs reaching this leaf.
        sbr_fraction: f64,
    },
}

/// Nodes stored flat; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(sbr_fraction: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { sbr_fraction }],
        }
    }

    pub fn predict(&self, x: &FeatureVector) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { sbr_fraction } => return sbr_fraction,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x.get(feature) <= threshold { left as usize } else { right as usize },
            }
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left as usize).max(walk(nodes, right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub params: HyperParams,
    pub seed: u64,
    pub n_features: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: ForestModel,
}

impl ForestModel {
    pub fn predict_proba(&self, x: &FeatureVector) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict_many(&self, xs: &[FeatureVector]) -> Vec<f64> {
        xs.par_iter().map(|x| self.predict_proba(x)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        check_header(&file)?;
        Ok(file.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(self.to_json()?.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_reader(BufReader::new(f))?;
        check_header(&file)?;
        Ok(file.model)
    }
}

fn check_header(file: &ModelFile) -> Result<()> {
    if file.format != MODEL_FORMAT {
        return Err(Error::ModelFormat(format!("expected format `{MODEL_FORMAT}`, found `{}`", file.format)));
    }
    if file.version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!("unsupported model version {}", file.version)));
    }
    Ok(())
}

/// SBR iff `p >= threshold`.
pub fn classify(p: f64, threshold: f64) -> Label {
    if p >= threshold {
        Label::Sbr
    } else {
        Label::Nsbr
    }
}

/// Seed of the RNG for tree `index` of a forest seeded with `seed`.
pub fn tree_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64 ^ 0x5bd1_e995_0000_0000))
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Trains a forest. `n_features` bounds the feature columns; every column in
/// `xs` must be below it.
pub fn train_forest(
    xs: &[FeatureVector],
    ys: &[Label],
    n_features: usize,
    params: &HyperParams,
    seed: u64,
) -> Result<ForestModel> {
    params.validate()?;
    if xs.is_empty() {
        return Err(Error::EmptyTraining("random forest needs at least one sample".into()));
    }
    if xs.len() != ys.len() {
        return Err(Error::Size(format!("{} feature vectors but {} labels", xs.len(), ys.len())));
    }
    if let Some(c) = xs
        .iter()
        .flat_map(|x| x.entries().iter().map(|&(c, _)| c))
        .find(|&c| c as usize >= n_features)
    {
        return Err(Error::Size(format!("feature column {c} outside a space of {n_features}")));
    }
    let labels: Vec<bool> = ys.iter().map(|l| l.is_sbr()).collect();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| TreeBuilder::new(xs, &labels, n_features, params, tree_seed(seed, t)).build())
        .collect();
    Ok(ForestModel {
        trees,
        params: *params,
        seed,
        n_features,
    })
}

#[derive(Clone, Copy)]
struct Entry {
    value: f64,
    weight: u32,
    sbr: bool,
}

struct Candidate {
    feature: u32,
    threshold: f64,
    impurity: f64,
}

struct TreeBuilder<'a> {
    xs: &'a [FeatureVector],
    labels: &'a [bool],
    params: &'a HyperParams,
    n_features: usize,
    k: usize,
    rng: ChaCha8Rng,
    weights: Vec<u32>,
    samples: Vec<u32>,
    scratch: Vec<u32>,
    perm: Vec<u32>,
    slot: Vec<u32>,
    touched: Vec<u32>,
    buckets: Vec<Vec<Entry>>,
    nodes: Vec<Node>,
}

const NO_SLOT: u32 = u32::MAX;

impl<'a> TreeBuilder<'a> {
    fn new(xs: &'a [FeatureVector], labels: &'a [bool], n_features: usize, params: &'a HyperParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = xs.len();
        let weights = if params.bootstrap {
            let mut w = vec![0u32; n];
            for _ in 0..n {
                w[rng.random_range(0..n)] += 1;
            }
            w
        } else {
            vec![1u32; n]
        };
        let samples = (0..n as u32).filter(|&i| weights[i as usize] > 0).collect();
        TreeBuilder {
            xs,
            labels,
            params,
            n_features,
            k: params.max_features.resolve(n_features),
            rng,
            weights,
            samples,
            scratch: Vec::new(),
            perm: (0..n_features as u32).collect(),
            slot: vec![NO_SLOT; n_features],
            touched: Vec::new(),
            buckets: Vec::new(),
            nodes: Vec::new(),
        }
    }

    fn build(mut self) -> Tree {
        // (node index, sample range, depth)
        let mut stack = vec![(0usize, 0usize, self.samples.len(), 0usize)];
        self.nodes.push(Node::Leaf { sbr_fraction: 0.0 });
        while let Some((id, start, end, depth)) = stack.pop() {
            let (total, sbr) = self.totals(start, end);
            let fraction = sbr as f64 / total as f64;
            let p = self.params;
            let stop = sbr == 0
                || sbr == total
                || total < p.min_samples_split as u64
                || total < 2 * p.min_samples_leaf as u64
                || p.max_depth.is_some_and(|d| depth >= d);
            let split = if stop { None } else { self.best_split(start, end, total, sbr) };
            match split {
                None => self.nodes[id] = Node::Leaf { sbr_fraction: fraction },
                Some(c) => {
                    let mid = self.partition(start, end, c.feature, c.threshold);
                    let left = self.nodes.len();
                    self.nodes.push(Node::Leaf { sbr_fraction: 0.0 });
                    self.nodes.push(Node::Leaf { sbr_fraction: 0.0 });
                    self.nodes[id] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left: left as u32,
                        right: left as u32 + 1,
                    };
                    stack.push((left + 1, mid, end, depth + 1));
                    stack.push((left, start, mid, depth + 1));
                }
            }
        }
        Tree { nodes: self.nodes }
    }

    fn totals(&self, start: usize, end: usize) -> (u64, u64) {
        let mut total = 0u64;
        let mut sbr = 0u64;
        for &s in &self.samples[start..end] {
            let w = self.weights[s as usize] as u64;
            total += w;
            if self.labels[s as usize] {
                sbr += w;
            }
        }
        (total, sbr)
    }

    fn best_split(&mut self, start: usize, end: usize, total: u64, sbr: u64) -> Option<Candidate> {
        // Gather the node's nonzero entries per feature.
        for &s in &self.samples[start..end] {
            let (w, y) = (self.weights[s as usize], self.labels[s as usize]);
            for &(f, v) in self.xs[s as usize].entries() {
                let slot = &mut self.slot[f as usize];
                if *slot == NO_SLOT {
                    *slot = self.touched.len() as u32;
                    if self.buckets.len() <= self.touched.len() {
                        self.buckets.push(Vec::new());
                    }
                    self.buckets[self.touched.len()].clear();
                    self.touched.push(f);
                }
                self.buckets[*slot as usize].push(Entry { value: v, weight: w, sbr: y });
            }
        }

        let parent = sbr as f64 * (total - sbr) as f64 / total as f64;
        let mut best: Option<Candidate> = None;
        let mut visited = 0usize;
        let mut informative = false;
        let mut i = 0usize;
        while i < self.n_features && (visited < self.k || !informative) {
            let j = self.rng.random_range(i..self.n_features);
            self.perm.swap(i, j);
            let f = self.perm[i];
            i += 1;
            visited += 1;
            let slot = self.slot[f as usize];
            if slot == NO_SLOT {
                continue;
            }
            let bucket = &mut self.buckets[slot as usize];
            if let Some((threshold, impurity)) = best_threshold(bucket, total, sbr, self.params.min_samples_leaf as u64) {
                informative = true;
                if impurity < parent * (1.0 - 1e-12) && best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        impurity,
                    });
                }
            } else if !is_constant(bucket, total) {
                informative = true;
            }
        }

        for &f in &self.touched {
            self.slot[f as usize] = NO_SLOT;
        }
        self.touched.clear();
        best
    }

    /// Moves samples with `x[feature] <= threshold` to the front of the range,
    /// keeping relative order on both sides. Returns the boundary.
    fn partition(&mut self, start: usize, end: usize, feature: u32, threshold: f64) -> usize {
        self.scratch.clear();
        let mut write = start;
        for i in start..end {
            let s = self.samples[i];
            if self.xs[s as usize].get(feature) <= threshold {
                self.samples[write] = s;
                write += 1;
            } else {
                self.scratch.push(s);
            }
        }
        self.samples[write..end].copy_from_slice(&self.scratch);
        write
    }
}

fn is_constant(bucket: &[Entry], total: u64) -> bool {
    let nonzero: u64 = bucket.iter().map(|e| e.weight as u64).sum();
    let first = bucket[0].value;
    nonzero == total && bucket.iter().all(|e| e.value == first)
}

/// Best Gini split of one feature given the node's nonzero entries; the
/// remaining weight sits at value 0. Returns `(threshold, weighted impurity)`
/// where impurity is `sum over children of s_c (n_c - s_c) / n_c`, i.e. the
/// Gini impurity scaled by n / 2.
fn best_threshold(bucket: &mut [Entry], total: u64, sbr: u64, min_leaf: u64) -> Option<(f64, f64)> {
    bucket.sort_unstable_by(|a, b| a.value.total_cmp(&b.value));
    let nz_total: u64 = bucket.iter().map(|e| e.weight as u64).sum();
    let nz_sbr: u64 = bucket.iter().filter(|e| e.sbr).map(|e| e.weight as u64).sum();
    let zero_total = total - nz_total;
    let zero_sbr = sbr - nz_sbr;

    // Walk distinct values in ascending order with the implicit zero group
    // merged in at its position.
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    let push = |v: f64, w: u64, s: u64, groups: &mut Vec<(f64, u64, u64)>| match groups.last_mut() {
        Some(last) if last.0 == v => {
            last.1 += w;
            last.2 += s;
        }
        _ => groups.push((v, w, s)),
    };
    let mut zero_pending = zero_total > 0;
    for e in bucket.iter() {
        if zero_pending && e.value >= 0.0 {
            push(0.0, zero_total, zero_sbr, &mut groups);
            zero_pending = false;
        }
        push(e.value, e.weight as u64, if e.sbr { e.weight as u64 } else { 0 }, &mut groups);
    }
    if zero_pending {
        push(0.0, zero_total, zero_sbr, &mut groups);
    }
    if groups.len() < 2 {
        return None;
    }

    let mut best: Option<(f64, f64)> = None;
    let (mut left_n, mut left_s) = (0u64, 0u64);
    for w in groups.windows(2) {
        left_n += w[0].1;
        left_s += w[0].2;
        let (right_n, right_s) = (total - left_n, sbr - left_s);
        if left_n < min_leaf || right_n < min_leaf {
            continue;
        }
        let imp = left_s as f64 * (left_n - left_s) as f64 / left_n as f64
            + right_s as f64 * (right_n - right_s) as f64 / right_n as f64;
        if best.is_none_or(|(_, b)| imp < b) {
            let mut thr = w[0].0 + (w[1].0 - w[0].0) / 2.0;
            if thr >= w[1].0 {
                thr = w[0].0;
            }
            best = Some((thr, imp));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: &[&[f64]]) -> Vec<FeatureVector> {
        rows.iter().map(|r| FeatureVector::from_dense(r)).collect()
    }

    fn lbl(v: &[u8]) -> Vec<Label> {
        v.iter().map(|&b| if b == 1 { Label::Sbr } else { Label::Nsbr }).collect()
    }

    #[test]
    fn params_validation() {
        assert!(HyperParams::default().validate().is_ok());
        let bad = [
            HyperParams { n_trees: 0, ..Default::default() },
            HyperParams { min_samples_split: 1, ..Default::default() },
            HyperParams { min_samples_leaf: 0, ..Default::default() },
            HyperParams { max_depth: Some(0), ..Default::default() },
            HyperParams { max_features: MaxFeatures::Fraction(0.0), ..Default::default() },
            HyperParams { max_features: MaxFeatures::Count(0), ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn max_features_resolution() {
        assert_eq!(MaxFeatures::Sqrt.resolve(4000), 63);
        assert_eq!(MaxFeatures::Fraction(0.5).resolve(10), 5);
        assert_eq!(MaxFeatures::Fraction(0.01).resolve(10), 1);
        assert_eq!(MaxFeatures::Count(50).resolve(10), 10);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(train_forest(&[], &[], 3, &HyperParams::default(), 0), Err(Error::EmptyTraining(_))));
    }

    #[test]
    fn single_class_gives_constant_probability() {
        let xs = dense(&[&[1.0, 0.0], &[0.0, 2.0], &[3.0, 1.0]]);
        let m = train_forest(&xs, &lbl(&[1, 1, 1]), 2, &HyperParams { n_trees: 5, ..Default::default() }, 1).unwrap();
        for x in &xs {
            assert_eq!(m.predict_proba(x), 1.0);
        }
        assert_eq!(m.predict_proba(&FeatureVector::default()), 1.0);
    }

    #[test]
    fn classify_boundary() {
        assert_eq!(classify(0.5, 0.5), Label::Sbr);
        assert_eq!(classify(0.49, 0.5), Label::Nsbr);
        assert_eq!(classify(1.0, 0.5), Label::Sbr);
    }

    #[test]
    fn averaging_over_trees() {
        let m = ForestModel {
            trees: vec![Tree::leaf(1.0), Tree::leaf(0.0)],
            params: HyperParams::default(),
            seed: 0,
            n_features: 1,
        };
        assert_eq!(m.predict_proba(&FeatureVector::default()), 0.5);
    }

    #[test]
    fn threshold_search_uses_midpoints_and_zero_mass() {
        // values: 0 (x2, NSBR), 1.0 (SBR), 3.0 (SBR)
        let mut b = vec![
            Entry { value: 3.0, weight: 1, sbr: true },
            Entry { value: 1.0, weight: 1, sbr: true },
        ];
        let (thr, imp) = best_threshold(&mut b, 4, 2, 1).unwrap();
        assert_eq!(thr, 0.5);
        assert_eq!(imp, 0.0);
        // min_samples_leaf 3 forbids every cut of 4 samples.
        assert!(best_threshold(&mut b, 4, 2, 3).is_none());
    }

    #[test]
    fn negative_values_sort_before_zero() {
        let mut b = vec![
            Entry { value: -2.0, weight: 1, sbr: true },
            Entry { value: 5.0, weight: 1, sbr: false },
        ];
        let (thr, imp) = best_threshold(&mut b, 3, 1, 1).unwrap();
        assert_eq!(thr, -1.0);
        assert_eq!(imp, 0.0);
    }

    #[test]
    fn depth_bound_respected() {
        let xs: Vec<FeatureVector> = (0..64).map(|i| FeatureVector::from_dense(&[i as f64, (i * 7 % 13) as f64])).collect();
        let ys: Vec<Label> = (0..64).map(|i| if (i / 3) % 2 == 0 { Label::Sbr } else { Label::Nsbr }).collect();
        let p = HyperParams {
            n_trees: 8,
            max_depth: Some(3),
            max_features: MaxFeatures::Count(2),
            ..Default::default()
        };
        let m = train_forest(&xs, &ys, 2, &p, 9).unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 3));
        assert!(m.trees.iter().any(|t| t.depth() == 3));
    }

    #[test]
    fn rejects_out_of_range_columns() {
        let xs = vec![FeatureVector::from_entries(vec![(5, 1.0)])];
        assert!(train_forest(&xs, &lbl(&[1]), 3, &HyperParams::default(), 0).is_err());
    }

    #[test]
    fn model_file_round_trip_and_header_checks() {
        let xs = dense(&[&[0.1, 0.0], &[0.2, 1.0 / 3.0], &[0.9, 0.7], &[0.4, 0.0]]);
        let m = train_forest(&xs, &lbl(&[0, 1, 1, 0]), 2, &HyperParams { n_trees: 4, ..Default::default() }, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        assert_eq!(ForestModel::load(&path).unwrap(), m);

        let text = m.to_json().unwrap();
        let wrong_version = text.replace("\"version\":1", "\"version\":99");
        assert!(matches!(ForestModel::from_json(&wrong_version), Err(Error::ModelFormat(_))));
        let wrong_format = text.replace(MODEL_FORMAT, "other");
        assert!(matches!(ForestModel::from_json(&wrong_format), Err(Error::ModelFormat(_))));
    }
}
