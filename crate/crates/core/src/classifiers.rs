//! Random forest grown from scratch, plus baseline classifiers sharing the
//! same prediction contract.
//!
//! Trees split on count-weighted Gini impurity at midpoints between
//! consecutive distinct values; a value equal to the threshold goes left.
//! Every tree draws its randomness from its own ChaCha stream, so a forest
//! is a pure function of `(data, config)` whatever the thread count.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureRow, FeatureVector};
use crate::labeling::Category;

pub const MODEL_FORMAT: &str = "footprint-forest";
pub const MODEL_VERSION: u32 = 1;
const K: usize = Category::COUNT;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("gini impurity of an empty node")]
    EmptyNode,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set holds a single class")]
    SingleClassTrainingSet,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sample {0:?} has a non-finite feature value")]
    NonFinite(String),
    #[error("sample {0:?} is labeled uncategorized")]
    UntrainableLabel(String),
    #[error("unsupported classifier kind {0}")]
    UnsupportedKind(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("model format {format:?} version {version} is not supported")]
    UnsupportedModel { format: String, version: u32 },
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ClassifierError> = std::result::Result<T, E>;

/// `1 - Σ p_c²`.
pub fn gini_impurity(counts: &[f64]) -> Result<f64> {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 || counts.iter().any(|c| *c < 0.0) {
        return Err(ClassifierError::EmptyNode);
    }
    Ok(gini(counts))
}

fn gini(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

/// Count-weighted impurity of a two-way split.
fn children_impurity(left: &[f64], right: &[f64]) -> f64 {
    let wl: f64 = left.iter().sum();
    let wr: f64 = right.iter().sum();
    (wl * gini(left) + wr * gini(right)) / (wl + wr)
}

/// Impurities closer than this are ties, so rounding in the weighted sum
/// cannot reorder splits whose exact impurities are equal.
const IMPURITY_TIE: f64 = 1e-12;

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub account_id: String,
    pub values: Vec<f64>,
    pub category: Category,
}

impl Sample {
    pub fn new(account_id: impl Into<String>, values: Vec<f64>, category: Category) -> Self {
        Sample {
            account_id: account_id.into(),
            values,
            category,
        }
    }

    fn class(&self) -> usize {
        self.category.index().expect("validated trainable label")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub feature_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl TrainingSet {
    pub fn new(feature_names: Vec<String>, samples: Vec<Sample>) -> Self {
        TrainingSet { feature_names, samples }
    }

    /// Labeled, non-degenerate rows with a trainable category.
    pub fn from_rows(rows: &[FeatureRow]) -> Self {
        let feature_names = rows.first().map(|r| r.vector.feature_names.clone()).unwrap_or_default();
        let samples = rows
            .iter()
            .filter(|r| !r.vector.degenerate)
            .filter_map(|r| {
                let c = r.category.filter(|c| c.index().is_some())?;
                Some(Sample::new(r.vector.account_id.clone(), r.vector.values.clone(), c))
            })
            .collect();
        TrainingSet { feature_names, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_counts(&self) -> [u32; K] {
        let mut c = [0u32; K];
        for s in &self.samples {
            if let Some(i) = s.category.index() {
                c[i] += 1;
            }
        }
        c
    }

    pub fn subset(&self, indices: &[usize]) -> TrainingSet {
        TrainingSet {
            feature_names: self.feature_names.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        validate_samples(&self.samples, self.dimension())
    }
}

fn validate_samples(samples: &[Sample], d: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    for s in samples {
        if s.values.len() != d {
            return Err(ClassifierError::DimensionMismatch {
                expected: d,
                got: s.values.len(),
            });
        }
        if s.values.iter().any(|v| !v.is_finite()) {
            return Err(ClassifierError::NonFinite(s.account_id.clone()));
        }
        if s.category.index().is_none() {
            return Err(ClassifierError::UntrainableLabel(s.account_id.clone()));
        }
    }
    Ok(())
}

fn require_two_classes(samples: &[Sample]) -> Result<()> {
    let first = samples[0].category;
    if samples.iter().all(|s| s.category == first) {
        return Err(ClassifierError::SingleClassTrainingSet);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassWeighting {
    #[default]
    None,
    InverseFrequency,
}

impl FromStr for ClassWeighting {
    type Err = ClassifierError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ClassWeighting::None),
            "inverse-frequency" => Ok(ClassWeighting::InverseFrequency),
            other => Err(ClassifierError::InvalidConfig(format!("class weighting {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_trees: usize,
    /// `None` grows every tree to purity.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// `None` means `⌈√d⌉`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub class_weighting: ClassWeighting,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: None,
            bootstrap: true,
            class_weighting: ClassWeighting::None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Features drawn per split for a `d`-dimensional problem.
    pub fn resolved_features_per_split(&self, d: usize) -> Result<usize> {
        let m = self
            .features_per_split
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize);
        if m == 0 || m > d {
            return Err(ClassifierError::InvalidConfig(format!(
                "features_per_split {m} outside [1, {d}]"
            )));
        }
        Ok(m)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(ClassifierError::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(ClassifierError::InvalidConfig(
                "min_samples_split must be at least 2".into(),
            ));
        }
        self.resolved_features_per_split(d).map(drop)
    }

    /// A single exhaustive CART tree: all features, no resampling.
    pub fn single_tree(max_depth: Option<usize>, seed: u64) -> Self {
        TrainConfig {
            n_trees: 1,
            max_depth,
            bootstrap: false,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecisionNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<DecisionNode>,
        right: Box<DecisionNode>,
    },
    Leaf {
        counts: [u32; K],
        majority: Category,
    },
}

impl DecisionNode {
    pub fn leaf(&self, values: &[f64]) -> &DecisionNode {
        let mut node = self;
        while let DecisionNode::Split {
            feature,
            threshold,
            left,
            right,
        } = node
        {
            node = if values[*feature] <= *threshold { left } else { right };
        }
        node
    }

    pub fn predict(&self, values: &[f64]) -> Category {
        match self.leaf(values) {
            DecisionNode::Leaf { majority, .. } => *majority,
            DecisionNode::Split { .. } => unreachable!("leaf() stops at leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            DecisionNode::Leaf { .. } => 0,
            DecisionNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            DecisionNode::Leaf { .. } => 1,
            DecisionNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            DecisionNode::Leaf { .. } => None,
            DecisionNode::Split {
                feature, left, right, ..
            } => Some(*feature).max(left.max_feature()).max(right.max_feature()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Count-weighted Gini of the two children.
    pub impurity: f64,
}

/// Exhaustive search over `candidates` (scanned in ascending index order)
/// and midpoints of consecutive distinct values. The first minimum wins;
/// impurities within 1e-12 of each other count as equal.
///
/// A split that leaves impurity unchanged is still returned: parity-style
/// patterns need one to make progress. `None` means no candidate feature
/// takes two distinct values.
pub fn best_split(samples: &[Sample], candidates: &[usize]) -> Option<SplitChoice> {
    let x: Vec<&[f64]> = samples.iter().map(|s| s.values.as_slice()).collect();
    let y: Vec<usize> = samples.iter().map(Sample::class).collect();
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut c = candidates.to_vec();
    c.sort_unstable();
    c.dedup();
    split_search(&x, &y, &[1.0; K], &idx, &c)
}

fn class_totals(y: &[usize], w: &[f64; K], idx: &[usize]) -> ([f64; K], [u32; K]) {
    let mut wc = [0.0; K];
    let mut n = [0u32; K];
    for &i in idx {
        wc[y[i]] += w[y[i]];
        n[y[i]] += 1;
    }
    (wc, n)
}

fn split_search(x: &[&[f64]], y: &[usize], w: &[f64; K], idx: &[usize], candidates: &[usize]) -> Option<SplitChoice> {
    let mut best: Option<SplitChoice> = None;
    let mut order = idx.to_vec();
    for &f in candidates {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left = [0.0; K];
        let mut right = class_totals(y, w, &order).0;
        for p in 0..order.len().saturating_sub(1) {
            let c = y[order[p]];
            left[c] += w[c];
            right[c] -= w[c];
            let (a, b) = (x[order[p]][f], x[order[p + 1]][f]);
            if a == b {
                continue;
            }
            let impurity = children_impurity(&left, &right);
            if best.is_none_or(|s| impurity < s.impurity - IMPURITY_TIE) {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: midpoint(a, b),
                    impurity,
                });
            }
        }
    }
    best
}

struct Grower<'a> {
    x: Vec<&'a [f64]>,
    y: Vec<usize>,
    w: [f64; K],
    max_depth: Option<usize>,
    min_samples_split: usize,
    mtry: usize,
    d: usize,
}

impl Grower<'_> {
    fn majority(wc: &[f64; K]) -> Category {
        let mut best = 0;
        for c in 1..K {
            if wc[c] > wc[best] {
                best = c;
            }
        }
        Category::from_index(best)
    }

    fn candidates(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
        let varies = |f: usize| idx.iter().any(|&i| self.x[i][f] != self.x[idx[0]][f]);
        let mut out: Vec<usize> = if self.mtry >= self.d {
            (0..self.d).filter(|&f| varies(f)).collect()
        } else {
            // Keep drawing past constant features until `mtry` usable ones
            // are found or the permutation runs out.
            let mut perm: Vec<usize> = (0..self.d).collect();
            perm.shuffle(rng);
            perm.into_iter().filter(|&f| varies(f)).take(self.mtry).collect()
        };
        out.sort_unstable();
        out
    }

    fn grow(&self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> DecisionNode {
        let (wc, counts) = class_totals(&self.y, &self.w, &idx);
        let leaf = DecisionNode::Leaf {
            counts,
            majority: Self::majority(&wc),
        };
        let classes = counts.iter().filter(|c| **c > 0).count();
        if classes <= 1 || self.max_depth.is_some_and(|m| depth >= m) || idx.len() < self.min_samples_split {
            return leaf;
        }
        let candidates = self.candidates(&idx, rng);
        let Some(split) = split_search(&self.x, &self.y, &self.w, &idx, &candidates) else {
            return leaf;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x[i][split.feature] <= split.threshold);
        DecisionNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(self.grow(l, depth + 1, rng)),
            right: Box::new(self.grow(r, depth + 1, rng)),
        }
    }
}

fn class_weights(samples: &[Sample], mode: ClassWeighting) -> [f64; K] {
    match mode {
        ClassWeighting::None => [1.0; K],
        ClassWeighting::InverseFrequency => {
            let mut n = [0usize; K];
            for s in samples {
                n[s.class()] += 1;
            }
            let present = n.iter().filter(|c| **c > 0).count() as f64;
            let total = samples.len() as f64;
            n.map(|c| if c == 0 { 0.0 } else { total / (present * c as f64) })
        }
    }
}

fn tree_rng(seed: u64, tree: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree);
    rng
}

/// Grows one tree over all of `samples` using the config's depth, split
/// and feature-sampling settings. `bootstrap` and `n_trees` are ignored.
pub fn train_tree(samples: &[Sample], config: &TrainConfig, seed: u64) -> Result<DecisionNode> {
    let d = samples.first().map_or(0, |s| s.values.len());
    validate_samples(samples, d)?;
    let mtry = config.resolved_features_per_split(d)?;
    let w = class_weights(samples, config.class_weighting);
    let grower = grower(samples, w, config, mtry);
    Ok(grower.grow((0..samples.len()).collect(), 0, &mut tree_rng(seed, 0)))
}

fn grower<'a>(samples: &'a [Sample], w: [f64; K], config: &TrainConfig, mtry: usize) -> Grower<'a> {
    Grower {
        x: samples.iter().map(|s| s.values.as_slice()).collect(),
        y: samples.iter().map(Sample::class).collect(),
        w,
        max_depth: config.max_depth,
        min_samples_split: config.min_samples_split,
        mtry,
        d: samples.first().map_or(0, |s| s.values.len()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub samples: usize,
    pub class_counts: [u32; K],
    pub features_per_split: usize,
    /// Out-of-bag accuracy per tree; `None` without bootstrap or when the
    /// bootstrap covered every sample.
    pub oob_accuracy: Vec<Option<f64>>,
    pub mean_oob_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<DecisionNode>,
    pub config: TrainConfig,
    pub feature_names: Vec<String>,
    pub summary: TrainingSummary,
}

pub fn train_forest(set: &TrainingSet, config: &TrainConfig) -> Result<ForestModel> {
    set.validate()?;
    require_two_classes(&set.samples)?;
    config.validate(set.dimension())?;
    let mtry = config.resolved_features_per_split(set.dimension())?;
    let w = class_weights(&set.samples, config.class_weighting);
    let grower = grower(&set.samples, w, config, mtry);
    let n = set.len();

    let grown: Vec<(DecisionNode, Option<f64>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(config.seed, t as u64);
            if !config.bootstrap {
                return (grower.grow((0..n).collect(), 0, &mut rng), None);
            }
            let mut drawn = vec![false; n];
            let idx: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    drawn[i] = true;
                    i
                })
                .collect();
            let tree = grower.grow(idx, 0, &mut rng);
            let oob: Vec<usize> = (0..n).filter(|&i| !drawn[i]).collect();
            let acc = (!oob.is_empty()).then(|| {
                let hit = oob
                    .iter()
                    .filter(|&&i| tree.predict(&set.samples[i].values) == set.samples[i].category)
                    .count();
                hit as f64 / oob.len() as f64
            });
            (tree, acc)
        })
        .collect();

    let (trees, oob_accuracy): (Vec<_>, Vec<_>) = grown.into_iter().unzip();
    let known: Vec<f64> = oob_accuracy.iter().flatten().copied().collect();
    let mean_oob_accuracy = (!known.is_empty()).then(|| known.iter().sum::<f64>() / known.len() as f64);
    Ok(ForestModel {
        trees,
        config: config.clone(),
        feature_names: set.feature_names.clone(),
        summary: TrainingSummary {
            samples: n,
            class_counts: set.class_counts(),
            features_per_split: mtry,
            oob_accuracy,
            mean_oob_accuracy,
        },
    })
}

/// Runs `train_forest` on a dedicated pool of `threads` workers
/// (0 = rayon's default).
pub fn train_forest_with_threads(set: &TrainingSet, config: &TrainConfig, threads: usize) -> Result<ForestModel> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ClassifierError::ThreadPool(e.to_string()))?
        .install(|| train_forest(set, config))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub account_id: String,
    pub category: Category,
    /// Fractions indexed by category order; they sum to 1.
    pub distribution: [f64; K],
}

impl Prediction {
    pub fn from_distribution(account_id: impl Into<String>, distribution: [f64; K]) -> Self {
        Prediction {
            account_id: account_id.into(),
            category: argmax(&distribution),
            distribution,
        }
    }

    pub fn share(&self, c: Category) -> f64 {
        c.index().map_or(0.0, |i| self.distribution[i])
    }
}

/// Highest entry; ties go to the earlier category.
pub fn argmax(distribution: &[f64; K]) -> Category {
    let mut best = 0;
    for c in 1..K {
        if distribution[c] > distribution[best] {
            best = c;
        }
    }
    Category::from_index(best)
}

/// Shared prediction contract of the forest and the baselines.
pub trait Classifier: Send + Sync {
    fn dimension(&self) -> usize;

    /// Class distribution for an already dimension-checked vector.
    fn distribution(&self, values: &[f64]) -> [f64; K];

    fn predict_values(&self, account_id: &str, values: &[f64]) -> Result<Prediction> {
        if values.len() != self.dimension() {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dimension(),
                got: values.len(),
            });
        }
        Ok(Prediction::from_distribution(account_id, self.distribution(values)))
    }

    fn predict(&self, vector: &FeatureVector) -> Result<Prediction> {
        self.predict_values(&vector.account_id, &vector.values)
    }
}

impl Classifier for ForestModel {
    fn dimension(&self) -> usize {
        self.feature_names.len()
    }

    fn distribution(&self, values: &[f64]) -> [f64; K] {
        let mut votes = [0usize; K];
        for t in &self.trees {
            votes[t.predict(values).index().expect("leaf majority is trainable")] += 1;
        }
        let n = self.trees.len() as f64;
        votes.map(|v| v as f64 / n)
    }
}

pub fn predict(model: &ForestModel, vector: &FeatureVector) -> Result<Prediction> {
    model.predict(vector)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "lowercase")]
enum FlatNode {
    Split { feature: usize, threshold: f64 },
    Leaf { counts: [u32; K], majority: Category },
}

fn flatten(node: &DecisionNode, out: &mut Vec<FlatNode>) {
    match node {
        DecisionNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            out.push(FlatNode::Split {
                feature: *feature,
                threshold: *threshold,
            });
            flatten(left, out);
            flatten(right, out);
        }
        DecisionNode::Leaf { counts, majority } => out.push(FlatNode::Leaf {
            counts: *counts,
            majority: *majority,
        }),
    }
}

fn unflatten(nodes: &mut std::vec::IntoIter<FlatNode>) -> Result<DecisionNode> {
    match nodes.next() {
        None => Err(ClassifierError::CorruptModel("truncated tree".into())),
        Some(FlatNode::Leaf { counts, majority }) => {
            if counts.iter().all(|c| *c == 0) || majority.index().is_none() {
                return Err(ClassifierError::CorruptModel("invalid leaf".into()));
            }
            Ok(DecisionNode::Leaf { counts, majority })
        }
        Some(FlatNode::Split { feature, threshold }) => Ok(DecisionNode::Split {
            feature,
            threshold,
            left: Box::new(unflatten(nodes)?),
            right: Box::new(unflatten(nodes)?),
        }),
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    config: TrainConfig,
    feature_names: Vec<String>,
    summary: TrainingSummary,
    trees: Vec<Vec<FlatNode>>,
}

impl ForestModel {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config: self.config.clone(),
            feature_names: self.feature_names.clone(),
            summary: self.summary.clone(),
            trees: self
                .trees
                .iter()
                .map(|t| {
                    let mut v = Vec::new();
                    flatten(t, &mut v);
                    v
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(ClassifierError::UnsupportedModel {
                format: file.format,
                version: file.version,
            });
        }
        let d = file.feature_names.len();
        let trees = file
            .trees
            .into_iter()
            .map(|nodes| {
                let mut it = nodes.into_iter();
                let tree = unflatten(&mut it)?;
                if it.next().is_some() {
                    return Err(ClassifierError::CorruptModel("trailing nodes".into()));
                }
                if tree.max_feature().is_some_and(|f| f >= d) {
                    return Err(ClassifierError::CorruptModel("split feature out of range".into()));
                }
                Ok(tree)
            })
            .collect::<Result<Vec<_>>>()?;
        if trees.len() != file.config.n_trees {
            return Err(ClassifierError::CorruptModel("tree count differs from config".into()));
        }
        Ok(ForestModel {
            trees,
            config: file.config,
            feature_names: file.feature_names,
            summary: file.summary,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    LogisticRegression,
    Knn,
    DecisionTree,
    NaiveBayes,
    Svm,
}

impl BaselineKind {
    pub const SUPPORTED: [BaselineKind; 4] = [
        BaselineKind::LogisticRegression,
        BaselineKind::Knn,
        BaselineKind::DecisionTree,
        BaselineKind::NaiveBayes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::LogisticRegression => "logistic-regression",
            BaselineKind::Knn => "knn",
            BaselineKind::DecisionTree => "decision-tree",
            BaselineKind::NaiveBayes => "naive-bayes",
            BaselineKind::Svm => "svm",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = ClassifierError;

    fn from_str(s: &str) -> Result<Self> {
        [
            BaselineKind::LogisticRegression,
            BaselineKind::Knn,
            BaselineKind::DecisionTree,
            BaselineKind::NaiveBayes,
            BaselineKind::Svm,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| ClassifierError::UnsupportedKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    pub knn_k: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub variance_floor: f64,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            knn_k: 5,
            learning_rate: 0.1,
            iterations: 1000,
            variance_floor: 1e-9,
            max_depth: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    present: [bool; K],
    /// Per class: bias followed by one weight per feature.
    weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    k: usize,
    points: Vec<Vec<f64>>,
    classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    log_prior: [f64; K],
    present: [bool; K],
    mean: Vec<Vec<f64>>,
    var: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineModel {
    LogisticRegression(LogisticModel),
    Knn(KnnModel),
    DecisionTree { tree: DecisionNode, dimension: usize },
    NaiveBayes(NaiveBayesModel),
}

impl BaselineModel {
    pub fn kind(&self) -> BaselineKind {
        match self {
            BaselineModel::LogisticRegression(_) => BaselineKind::LogisticRegression,
            BaselineModel::Knn(_) => BaselineKind::Knn,
            BaselineModel::DecisionTree { .. } => BaselineKind::DecisionTree,
            BaselineModel::NaiveBayes(_) => BaselineKind::NaiveBayes,
        }
    }
}

pub fn train_baseline(kind: BaselineKind, set: &TrainingSet, params: &BaselineParams) -> Result<BaselineModel> {
    if kind == BaselineKind::Svm {
        return Err(ClassifierError::UnsupportedKind(kind.name().into()));
    }
    set.validate()?;
    require_two_classes(&set.samples)?;
    let d = set.dimension();
    Ok(match kind {
        BaselineKind::LogisticRegression => BaselineModel::LogisticRegression(train_logistic(set, params)),
        BaselineKind::Knn => {
            if params.knn_k == 0 {
                return Err(ClassifierError::InvalidConfig("knn k must be at least 1".into()));
            }
            BaselineModel::Knn(KnnModel {
                k: params.knn_k,
                points: set.samples.iter().map(|s| s.values.clone()).collect(),
                classes: set.samples.iter().map(Sample::class).collect(),
            })
        }
        BaselineKind::DecisionTree => {
            let config = TrainConfig {
                features_per_split: Some(d),
                ..TrainConfig::single_tree(params.max_depth, params.seed)
            };
            BaselineModel::DecisionTree {
                tree: train_tree(&set.samples, &config, params.seed)?,
                dimension: d,
            }
        }
        BaselineKind::NaiveBayes => BaselineModel::NaiveBayes(train_naive_bayes(set, params.variance_floor)),
        BaselineKind::Svm => unreachable!(),
    })
}

fn softmax(logits: &[f64; K], present: &[bool; K]) -> [f64; K] {
    let max = (0..K)
        .filter(|&c| present[c])
        .map(|c| logits[c])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; K];
    for c in (0..K).filter(|&c| present[c]) {
        p[c] = (logits[c] - max).exp();
    }
    let z: f64 = p.iter().sum();
    p.map(|v| v / z)
}

fn train_logistic(set: &TrainingSet, params: &BaselineParams) -> LogisticModel {
    let d = set.dimension();
    let n = set.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| set.samples.iter().map(|s| s.values[j]).sum::<f64>() / n)
        .collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let v = set.samples.iter().map(|s| (s.values[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let xs: Vec<Vec<f64>> = set
        .samples
        .iter()
        .map(|s| (0..d).map(|j| (s.values[j] - mean[j]) / scale[j]).collect())
        .collect();
    let mut present = [false; K];
    for s in &set.samples {
        present[s.class()] = true;
    }
    let mut model = LogisticModel {
        mean,
        scale,
        present,
        weights: vec![vec![0.0; d + 1]; K],
    };
    for _ in 0..params.iterations {
        let mut grad = vec![vec![0.0; d + 1]; K];
        for (x, s) in xs.iter().zip(&set.samples) {
            let p = softmax(&model.logits(x), &present);
            for c in (0..K).filter(|&c| present[c]) {
                let err = p[c] - if s.class() == c { 1.0 } else { 0.0 };
                grad[c][0] += err;
                for j in 0..d {
                    grad[c][j + 1] += err * x[j];
                }
            }
        }
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= params.learning_rate * gi / n;
            }
        }
    }
    model
}

impl LogisticModel {
    fn logits(&self, standardized: &[f64]) -> [f64; K] {
        std::array::from_fn(|c| {
            let w = &self.weights[c];
            w[0] + standardized.iter().zip(&w[1..]).map(|(x, wi)| x * wi).sum::<f64>()
        })
    }
}

fn train_naive_bayes(set: &TrainingSet, floor: f64) -> NaiveBayesModel {
    let d = set.dimension();
    let mut n = [0usize; K];
    let mut sum = vec![vec![0.0; d]; K];
    for s in &set.samples {
        n[s.class()] += 1;
        for (acc, v) in sum[s.class()].iter_mut().zip(&s.values) {
            *acc += v;
        }
    }
    let mean: Vec<Vec<f64>> = (0..K)
        .map(|c| {
            sum[c]
                .iter()
                .map(|v| if n[c] == 0 { 0.0 } else { v / n[c] as f64 })
                .collect()
        })
        .collect();
    let mut var = vec![vec![0.0; d]; K];
    for s in &set.samples {
        let c = s.class();
        for j in 0..d {
            var[c][j] += (s.values[j] - mean[c][j]).powi(2);
        }
    }
    for c in 0..K {
        for v in &mut var[c] {
            *v = if n[c] == 0 { 1.0 } else { (*v / n[c] as f64).max(floor) };
        }
    }
    let total = set.len() as f64;
    NaiveBayesModel {
        log_prior: n.map(|c| {
            if c == 0 {
                f64::NEG_INFINITY
            } else {
                (c as f64 / total).ln()
            }
        }),
        present: n.map(|c| c > 0),
        mean,
        var,
    }
}

impl Classifier for BaselineModel {
    fn dimension(&self) -> usize {
        match self {
            BaselineModel::LogisticRegression(m) => m.mean.len(),
            BaselineModel::Knn(m) => m.points.first().map_or(0, Vec::len),
            BaselineModel::DecisionTree { dimension, .. } => *dimension,
            BaselineModel::NaiveBayes(m) => m.mean[0].len(),
        }
    }

    fn distribution(&self, values: &[f64]) -> [f64; K] {
        match self {
            BaselineModel::LogisticRegression(m) => {
                let x: Vec<f64> = values
                    .iter()
                    .zip(m.mean.iter().zip(&m.scale))
                    .map(|(v, (mu, s))| (v - mu) / s)
                    .collect();
                softmax(&m.logits(&x), &m.present)
            }
            BaselineModel::Knn(m) => {
                let mut dist: Vec<(f64, usize)> = m
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (p.iter().zip(values).map(|(a, b)| (a - b) * (a - b)).sum(), i))
                    .collect();
                dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let k = m.k.min(dist.len());
                let mut votes = [0.0; K];
                for &(_, i) in &dist[..k] {
                    votes[m.classes[i]] += 1.0;
                }
                votes.map(|v| v / k as f64)
            }
            BaselineModel::DecisionTree { tree, .. } => {
                let mut p = [0.0; K];
                p[tree.predict(values).index().expect("trainable")] = 1.0;
                p
            }
            BaselineModel::NaiveBayes(m) => {
                let logp: [f64; K] = std::array::from_fn(|c| {
                    if !m.present[c] {
                        return f64::NEG_INFINITY;
                    }
                    m.log_prior[c]
                        + values
                            .iter()
                            .enumerate()
                            .map(|(j, v)| {
                                let var = m.var[c][j];
                                -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (v - m.mean[c][j]).powi(2) / var)
                            })
                            .sum::<f64>()
                });
                softmax(&logp, &m.present)
            }
        }
    }
}
