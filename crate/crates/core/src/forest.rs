//! Random forest binary classifier.
//!
//! Trees are CART-style with Gini impurity, grown on bootstrap resamples.
//! Each tree draws from its own RNG stream seeded by `(seed, tree_index)`,
//! so training order and thread scheduling never change the model.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;
use crate::seed::derive_seed;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("model schema version {found} is not supported (expected {expected})")]
    Schema { found: u64, expected: u32 },
    #[error("malformed model: {0}")]
    Decode(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Gini impurity `1 - Σ p_c²` of a two-class count pair.
pub fn gini(counts: [f64; 2]) -> Result<f64, ForestError> {
    if counts.iter().any(|&c| c < 0.0) {
        return Err(ForestError::InvalidInput("negative class count".into()));
    }
    let total = counts[0] + counts[1];
    if total == 0.0 {
        return Err(ForestError::InvalidInput("gini of an empty node".into()));
    }
    Ok(gini_unchecked(counts, total))
}

fn gini_unchecked(counts: [f64; 2], total: f64) -> f64 {
    let p0 = counts[0] / total;
    let p1 = counts[1] / total;
    1.0 - (p0 * p0 + p1 * p1)
}

/// Labeled feature rows. All rows share one width and contain only finite
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    rows: Vec<Vec<f64>>,
    labels: Vec<Label>,
    n_features: usize,
}

impl TrainingSet {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self, ForestError> {
        if rows.len() != labels.len() {
            return Err(ForestError::InvalidInput(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        let n_features = rows.first().map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_features {
                return Err(ForestError::InvalidInput(format!(
                    "row {i} has {} features, expected {n_features}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(ForestError::InvalidInput(format!("row {i} has a non-finite value")));
            }
        }
        Ok(TrainingSet { rows, labels, n_features })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> TrainingSet {
        TrainingSet {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_features: self.n_features,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_trees: usize,
    /// `None` grows until purity or `min_samples_split`.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// `None` means floor(sqrt(n_features)).
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { n_trees: 100, max_depth: None, min_samples_split: 2, features_per_split: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { leaf_counts: [u32; 2] },
}

/// Nodes in preorder; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_for(&self, x: &[f64]) -> [u32; 2] {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Split { feature, threshold, left, right } => {
                    idx = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { leaf_counts } => return *leaf_counts,
            }
        }
    }

    /// Majority class of the reached leaf; a tied leaf votes class 1.
    pub fn vote(&self, x: &[f64]) -> usize {
        let counts = self.leaf_for(x);
        usize::from(counts[1] >= counts[0])
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub schema_version: u32,
    /// Class names indexed by class code.
    pub label_names: [String; 2],
    pub hyperparams: Hyperparams,
    pub feature_importance: Vec<f64>,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.feature_importance.len()
    }

    /// True when no tree ever split (single-class training data).
    pub fn is_degenerate(&self) -> bool {
        self.trees.iter().all(|t| t.nodes.len() == 1)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ForestError> {
        if x.len() != self.n_features() {
            return Err(ForestError::InvalidInput(format!("expected {} features, got {}", self.n_features(), x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ForestError::InvalidInput("non-finite feature value".into()));
        }
        Ok(())
    }

    /// Number of trees voting class 1.
    pub fn votes(&self, x: &[f64]) -> Result<usize, ForestError> {
        self.check_input(x)?;
        Ok(self.trees.iter().map(|t| t.vote(x)).sum())
    }

    /// Majority vote; an exact tie goes to DD.
    pub fn predict(&self, x: &[f64]) -> Result<Label, ForestError> {
        let ones = self.votes(x)?;
        Ok(if 2 * ones >= self.trees.len() { Label::Dd } else { Label::Ndd })
    }

    /// Fraction of trees voting DD.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ForestError> {
        let ones = self.votes(x)?;
        Ok(ones as f64 / self.trees.len() as f64)
    }

    pub fn to_json(&self) -> Result<Vec<u8>, ForestError> {
        let mut bytes = serde_json::to_vec(self).map_err(|e| ForestError::Decode(e.to_string()))?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ForestError> {
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| ForestError::Decode(e.to_string()))?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| ForestError::Decode("missing schema_version".into()))?;
        if version != u64::from(MODEL_SCHEMA_VERSION) {
            return Err(ForestError::Schema { found: version, expected: MODEL_SCHEMA_VERSION });
        }
        let model: ForestModel = serde_json::from_value(value).map_err(|e| ForestError::Decode(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ForestError> {
        let bad = |m: String| Err(ForestError::Decode(m));
        if self.trees.is_empty() {
            return bad("model has no trees".into());
        }
        if self.feature_importance.is_empty() {
            return bad("model has no features".into());
        }
        for (t, tree) in self.trees.iter().enumerate() {
            let n = tree.nodes.len();
            if n == 0 {
                return bad(format!("tree {t} is empty"));
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                if let Node::Split { feature, threshold, left, right } = node {
                    // Preorder: children come strictly after the parent, which
                    // also rules out cycles.
                    if *feature >= self.n_features()
                        || !threshold.is_finite()
                        || *left <= i
                        || *right <= i
                        || *left >= n
                        || *right >= n
                    {
                        return bad(format!("tree {t} node {i} is inconsistent"));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<(), ForestError> {
    fs::write(path, model.to_json()?).map_err(|source| ForestError::Io { path: path.to_path_buf(), source })
}

pub fn load_model(path: &Path) -> Result<ForestModel, ForestError> {
    let bytes = fs::read(path).map_err(|source| ForestError::Io { path: path.to_path_buf(), source })?;
    ForestModel::from_json(&bytes)
}

/// Trains trees in parallel on the rayon pool.
pub fn fit(data: &TrainingSet, hp: &Hyperparams) -> Result<ForestModel, ForestError> {
    fit_impl(data, hp, true)
}

/// Same model as [`fit`], one tree at a time on the calling thread.
pub fn fit_sequential(data: &TrainingSet, hp: &Hyperparams) -> Result<ForestModel, ForestError> {
    fit_impl(data, hp, false)
}

fn fit_impl(data: &TrainingSet, hp: &Hyperparams, parallel: bool) -> Result<ForestModel, ForestError> {
    if data.is_empty() {
        return Err(ForestError::InvalidInput("empty training set".into()));
    }
    if data.n_features() == 0 {
        return Err(ForestError::InvalidInput("training rows have no features".into()));
    }
    if hp.n_trees == 0 {
        return Err(ForestError::InvalidInput("n_trees must be at least 1".into()));
    }
    let n_features = data.n_features();
    let per_split = hp
        .features_per_split
        .unwrap_or_else(|| ((n_features as f64).sqrt().floor() as usize).max(1))
        .clamp(1, n_features);
    let resolved = Hyperparams { features_per_split: Some(per_split), ..*hp };

    let grow = |t: usize| TreeBuilder::new(data, &resolved, derive_seed(hp.seed, t as u64)).build();
    let grown: Vec<(Tree, Vec<f64>)> = if parallel {
        (0..hp.n_trees).into_par_iter().map(grow).collect()
    } else {
        (0..hp.n_trees).map(grow).collect()
    };

    let mut importance = vec![0.0; n_features];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, imp) in grown {
        for (acc, v) in importance.iter_mut().zip(imp) {
            *acc += v;
        }
        trees.push(tree);
    }
    let total: f64 = importance.iter().sum();
    if total > 0.0 {
        for v in &mut importance {
            *v /= total;
        }
    }

    let classes_present = Label::ALL.iter().filter(|l| data.labels().contains(l)).count();
    if classes_present < 2 {
        log::warn!("training data holds a single class; the model is constant");
    }

    Ok(ForestModel {
        schema_version: MODEL_SCHEMA_VERSION,
        label_names: [Label::Ndd.to_string(), Label::Dd.to_string()],
        hyperparams: resolved,
        feature_importance: importance,
        trees,
    })
}

/// Row indices of the bootstrap resample for one tree seed.
pub fn bootstrap_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl SplitChoice {
    /// Larger decrease wins; ties go to the lower feature, then the lower
    /// threshold.
    fn beats(&self, other: &SplitChoice) -> bool {
        self.decrease > other.decrease
            || (self.decrease == other.decrease && (self.feature, self.threshold) < (other.feature, other.threshold))
    }
}

struct TreeBuilder<'a> {
    data: &'a TrainingSet,
    hp: &'a Hyperparams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    importance: Vec<f64>,
    features: Vec<usize>,
    scratch: Vec<(f64, usize)>,
}

impl<'a> TreeBuilder<'a> {
    fn new(data: &'a TrainingSet, hp: &'a Hyperparams, seed: u64) -> Self {
        TreeBuilder {
            data,
            hp,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: Vec::new(),
            importance: vec![0.0; data.n_features()],
            features: (0..data.n_features()).collect(),
            scratch: Vec::new(),
        }
    }

    fn build(mut self) -> (Tree, Vec<f64>) {
        let mut sample = bootstrap_indices(self.data.len(), &mut self.rng);
        self.grow(&mut sample, 0);
        (Tree { nodes: self.nodes }, self.importance)
    }

    fn counts(&self, sample: &[usize]) -> [u32; 2] {
        let mut c = [0u32; 2];
        for &i in sample {
            c[self.data.labels[i].index()] += 1;
        }
        c
    }

    fn grow(&mut self, sample: &mut [usize], depth: usize) -> usize {
        let counts = self.counts(sample);
        let id = self.nodes.len();
        let pure = counts[0] == 0 || counts[1] == 0;
        let depth_capped = self.hp.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || sample.len() < self.hp.min_samples_split.max(2) {
            self.nodes.push(Node::Leaf { leaf_counts: counts });
            return id;
        }
        let Some(split) = self.best_split(sample, counts) else {
            self.nodes.push(Node::Leaf { leaf_counts: counts });
            return id;
        };
        self.importance[split.feature] += split.decrease;
        // Placeholder, patched once the children have indices.
        self.nodes.push(Node::Leaf { leaf_counts: counts });

        let rows = &self.data.rows;
        let mut mid = 0;
        for i in 0..sample.len() {
            if rows[sample[i]][split.feature] <= split.threshold {
                sample.swap(i, mid);
                mid += 1;
            }
        }
        let (left_s, right_s) = sample.split_at_mut(mid);
        let left = self.grow(left_s, depth + 1);
        let right = self.grow(right_s, depth + 1);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }

    /// Examines features in a random order. At least `features_per_split`
    /// are scored; if none of those admits a split, the search continues
    /// through the remaining features until one does.
    fn best_split(&mut self, sample: &[usize], counts: [u32; 2]) -> Option<SplitChoice> {
        let per_split = self.hp.features_per_split.unwrap_or(1);
        self.features.shuffle(&mut self.rng);
        let mut best: Option<SplitChoice> = None;
        for visited in 0..self.features.len() {
            if visited >= per_split && best.is_some() {
                break;
            }
            let feature = self.features[visited];
            if let Some(cand) = self.best_threshold(sample, counts, feature) {
                if best.as_ref().is_none_or(|b| cand.beats(b)) {
                    best = Some(cand);
                }
            }
        }
        best
    }

    fn best_threshold(&mut self, sample: &[usize], counts: [u32; 2], feature: usize) -> Option<SplitChoice> {
        let rows = &self.data.rows;
        let labels = &self.data.labels;
        self.scratch.clear();
        self.scratch.extend(sample.iter().map(|&i| (rows[i][feature], labels[i].index())));
        self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));

        let n = sample.len() as f64;
        let total = [f64::from(counts[0]), f64::from(counts[1])];
        let parent = n * gini_unchecked(total, n);
        let mut left = [0.0, 0.0];
        let mut best: Option<SplitChoice> = None;
        for i in 0..self.scratch.len() - 1 {
            let (v, class) = self.scratch[i];
            left[class] += 1.0;
            let next = self.scratch[i + 1].0;
            if next <= v {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = n - nl;
            let right = [total[0] - left[0], total[1] - left[1]];
            let decrease = parent - nl * gini_unchecked(left, nl) - nr * gini_unchecked(right, nr);
            let cand = SplitChoice { feature, threshold: midpoint(v, next), decrease };
            // Thresholds ascend, so strict improvement keeps the lowest on ties.
            if best.as_ref().is_none_or(|b| cand.decrease > b.decrease) {
                best = Some(cand);
            }
        }
        // Normalize by bootstrap size so every tree contributes on one scale.
        best.map(|mut b| {
            b.decrease /= self.data.len() as f64;
            b
        })
    }
}

/// Midpoint of two consecutive distinct values, kept strictly below `hi`
/// so that `lo <= t < hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}
