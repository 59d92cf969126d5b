//! Stratified cross-validation, per-category metrics, depth sweeps and
//! cross-dataset agreement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{
    self, train_baseline, train_forest, BaselineKind, BaselineParams, Classifier, ClassifierError, Prediction,
    TrainConfig, TrainingSet,
};
use crate::labeling::Category;

const K: usize = Category::COUNT;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_TEST_FRACTION: f64 = 0.3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("category {category:?} has {members} members, fewer than k = {k}")]
    CategoryTooSmall {
        category: Category,
        members: usize,
        k: usize,
    },
    #[error("account {0:?} is labeled uncategorized")]
    UntrainableLabel(String),
    #[error("truth and predictions cover different accounts ({0})")]
    AccountSetMismatch(String),
    #[error("no accounts shared between the datasets")]
    EmptyIntersection,
    #[error("coded labels cover none of the predicted accounts")]
    NoOverlap,
    #[error("depth range is empty")]
    EmptyDepthRange,
    #[error("test fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("split left an empty {0} set")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, account: &str) -> Option<usize> {
        self.folds.get(account).copied()
    }

    pub fn members(&self, fold: usize) -> impl Iterator<Item = &str> {
        self.folds
            .iter()
            .filter(move |(_, f)| **f == fold)
            .map(|(a, _)| a.as_str())
    }
}

fn by_category<'a>(labels: impl IntoIterator<Item = (&'a str, Category)>) -> Result<[Vec<&'a str>; K]> {
    let mut groups: [Vec<&str>; K] = Default::default();
    for (id, c) in labels {
        let i = c.index().ok_or_else(|| EvalError::UntrainableLabel(id.to_string()))?;
        groups[i].push(id);
    }
    for g in &mut groups {
        g.sort_unstable();
        g.dedup();
    }
    Ok(groups)
}

fn shuffled(mut ids: Vec<&str>, seed: u64, stream: u64) -> Vec<&str> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    ids.shuffle(&mut rng);
    ids
}

/// Per category: sort ids, shuffle with a seeded stream, deal round-robin.
/// Each category starts where the previous one stopped so fold totals stay
/// balanced too.
pub fn stratified_folds<'a>(
    labels: impl IntoIterator<Item = (&'a str, Category)>,
    k: usize,
    seed: u64,
) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(EvalError::InvalidK(k));
    }
    let groups = by_category(labels)?;
    for (i, g) in groups.iter().enumerate() {
        if !g.is_empty() && g.len() < k {
            return Err(EvalError::CategoryTooSmall {
                category: Category::from_index(i),
                members: g.len(),
                k,
            });
        }
    }
    let mut folds = BTreeMap::new();
    let mut offset = 0;
    for (i, g) in groups.into_iter().enumerate() {
        let n = g.len();
        for (j, id) in shuffled(g, seed, i as u64).into_iter().enumerate() {
            folds.insert(id.to_string(), (offset + j) % k);
        }
        offset = (offset + n) % k;
    }
    Ok(FoldAssignment { k, folds })
}

/// Stratified holdout: per category, `round(n_c * test_fraction)` shuffled
/// members go to the test side. Returns `(train, test)` index lists into
/// `set.samples`, both ascending.
pub fn holdout_split(set: &TrainingSet, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(EvalError::InvalidFraction(test_fraction));
    }
    let groups = by_category(set.samples.iter().map(|s| (s.account_id.as_str(), s.category)))?;
    let mut test_ids = BTreeSet::new();
    for (i, g) in groups.into_iter().enumerate() {
        let take = (g.len() as f64 * test_fraction).round() as usize;
        test_ids.extend(shuffled(g, seed, i as u64).into_iter().take(take));
    }
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..set.len()).partition(|&i| test_ids.contains(set.samples[i].account_id.as_str()));
    if train.is_empty() {
        return Err(EvalError::EmptySplit("training"));
    }
    if test.is_empty() {
        return Err(EvalError::EmptySplit("test"));
    }
    Ok((train, test))
}

/// Rows are true categories, columns predicted ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Category, Category)>) -> Self {
        let mut m = ConfusionMatrix::default();
        for (t, p) in pairs {
            m.add(t, p);
        }
        m
    }

    pub fn add(&mut self, truth: Category, predicted: Category) {
        if let (Some(t), Some(p)) = (truth.index(), predicted.index()) {
            self.counts[t][p] += 1;
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for t in 0..K {
            for p in 0..K {
                self.counts[t][p] += other.counts[t][p];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    fn column(&self, c: usize) -> u64 {
        (0..K).map(|t| self.counts[t][c]).sum()
    }

    fn row(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category: Category,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub predicted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub samples: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: u64,
    pub accuracy: f64,
    /// Mean F1 over categories with non-zero support.
    pub macro_f1: f64,
    pub per_category: Vec<CategoryMetrics>,
    pub confusion: ConfusionMatrix,
    /// Metrics whose denominator was zero and were reported as 0.
    pub zero_division: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<FoldSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_accuracy_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_accuracy_std: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl MetricsReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let mut zero_division = Vec::new();
        let per_category: Vec<CategoryMetrics> = Category::ALL
            .iter()
            .enumerate()
            .map(|(c, &category)| {
                let tp = confusion.counts[c][c];
                let predicted = confusion.column(c);
                let support = confusion.row(c);
                let precision = ratio(tp, predicted).unwrap_or_else(|| {
                    zero_division.push(format!("{}.precision", category.token()));
                    0.0
                });
                let recall = ratio(tp, support).unwrap_or_else(|| {
                    zero_division.push(format!("{}.recall", category.token()));
                    0.0
                });
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                CategoryMetrics {
                    category,
                    precision,
                    recall,
                    f1,
                    support,
                    predicted,
                }
            })
            .collect();
        let total = confusion.total();
        let accuracy = ratio(confusion.trace(), total).unwrap_or(0.0);
        // Micro precision and micro recall both reduce to the accuracy.
        let micro_p = ratio(
            per_category
                .iter()
                .map(|m| confusion.counts[m.category.index().unwrap()][m.category.index().unwrap()])
                .sum(),
            per_category.iter().map(|m| m.predicted).sum(),
        )
        .unwrap_or(0.0);
        let micro_r = ratio(confusion.trace(), per_category.iter().map(|m| m.support).sum()).unwrap_or(0.0);
        assert!(
            micro_p == accuracy && micro_r == accuracy,
            "micro-averaging identity violated"
        );
        let present: Vec<&CategoryMetrics> = per_category.iter().filter(|m| m.support > 0).collect();
        let macro_f1 = if present.is_empty() {
            0.0
        } else {
            present.iter().map(|m| m.f1).sum::<f64>() / present.len() as f64
        };
        MetricsReport {
            samples: total,
            accuracy,
            macro_f1,
            per_category,
            confusion,
            zero_division,
            folds: Vec::new(),
            fold_accuracy_mean: None,
            fold_accuracy_std: None,
        }
    }

    pub fn category(&self, c: Category) -> Option<&CategoryMetrics> {
        self.per_category.iter().find(|m| m.category == c)
    }

    /// Markdown table with one row per category, then accuracy and macro
    /// averages.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Category | Precision | Recall | F1-Score | Support |\n|---|---|---|---|---|\n");
        for m in &self.per_category {
            let _ = writeln!(
                s,
                "| {} | {:.2} | {:.2} | {:.2} | {} |",
                m.category.display_name(),
                m.precision,
                m.recall,
                m.f1,
                m.support
            );
        }
        let present: Vec<&CategoryMetrics> = self.per_category.iter().filter(|m| m.support > 0).collect();
        let avg = |f: fn(&CategoryMetrics) -> f64| {
            if present.is_empty() {
                0.0
            } else {
                present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64
            }
        };
        let _ = writeln!(s, "| Accuracy | | | {:.2} | {} |", self.accuracy, self.samples);
        let _ = writeln!(
            s,
            "| Macro avg | {:.2} | {:.2} | {:.2} | {} |",
            avg(|m| m.precision),
            avg(|m| m.recall),
            self.macro_f1,
            self.samples
        );
        if let (Some(mean), Some(std)) = (self.fold_accuracy_mean, self.fold_accuracy_std) {
            let _ = writeln!(
                s,
                "\nFold accuracy: {mean:.4} ± {std:.4} over {} folds",
                self.folds.len()
            );
        }
        s
    }
}

pub fn evaluate(truth: &BTreeMap<String, Category>, predictions: &[Prediction]) -> Result<MetricsReport> {
    let predicted: BTreeMap<&str, Category> = predictions
        .iter()
        .map(|p| (p.account_id.as_str(), p.category))
        .collect();
    if predicted.len() != predictions.len() {
        return Err(EvalError::AccountSetMismatch("duplicate predictions".into()));
    }
    if let Some(a) = truth.keys().find(|a| !predicted.contains_key(a.as_str())) {
        return Err(EvalError::AccountSetMismatch(format!("{a:?} has no prediction")));
    }
    if let Some(a) = predicted.keys().find(|a| !truth.contains_key(**a)) {
        return Err(EvalError::AccountSetMismatch(format!("{a:?} has no truth label")));
    }
    for (a, c) in truth {
        if c.index().is_none() {
            return Err(EvalError::UntrainableLabel(a.clone()));
        }
    }
    Ok(MetricsReport::from_confusion(ConfusionMatrix::from_pairs(
        truth.iter().map(|(a, t)| (*t, predicted[a.as_str()])),
    )))
}

/// Trains a model on a training set.
pub type Trainer<'a> = dyn Fn(&TrainingSet) -> Result<Box<dyn Classifier>, ClassifierError> + Sync + 'a;

pub fn forest_trainer(
    config: TrainConfig,
) -> impl Fn(&TrainingSet) -> Result<Box<dyn Classifier>, ClassifierError> + Sync {
    move |set| Ok(Box::new(train_forest(set, &config)?))
}

pub fn baseline_trainer(
    kind: BaselineKind,
    params: BaselineParams,
) -> impl Fn(&TrainingSet) -> Result<Box<dyn Classifier>, ClassifierError> + Sync {
    move |set| Ok(Box::new(train_baseline(kind, set, &params)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutPrediction {
    pub fold: usize,
    pub truth: Category,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: FoldAssignment,
    pub report: MetricsReport,
    pub predictions: Vec<HeldOutPrediction>,
}

fn predict_indices(model: &dyn Classifier, set: &TrainingSet, idx: &[usize]) -> Result<Vec<Prediction>> {
    idx.iter()
        .map(|&i| {
            let s = &set.samples[i];
            Ok(model.predict_values(&s.account_id, &s.values)?)
        })
        .collect()
}

/// Trains on k−1 folds and predicts the held fold, for every fold in
/// parallel. Aggregation follows fold order.
pub fn cross_validate(set: &TrainingSet, trainer: &Trainer<'_>, k: usize, seed: u64) -> Result<CrossValidation> {
    let folds = stratified_folds(set.samples.iter().map(|s| (s.account_id.as_str(), s.category)), k, seed)?;
    let fold_of: Vec<usize> = set
        .samples
        .iter()
        .map(|s| folds.fold_of(&s.account_id).expect("every sample assigned"))
        .collect();
    let per_fold: Vec<(Vec<usize>, Vec<Prediction>)> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..set.len()).partition(|&i| fold_of[i] == f);
            let model = trainer(&set.subset(&train))?;
            let preds = predict_indices(model.as_ref(), set, &test)?;
            Ok((test, preds))
        })
        .collect::<Result<_>>()?;

    let mut confusion = ConfusionMatrix::default();
    let mut summaries = Vec::with_capacity(k);
    let mut predictions = Vec::new();
    for (f, (test, preds)) in per_fold.into_iter().enumerate() {
        let cm = ConfusionMatrix::from_pairs(
            test.iter()
                .zip(&preds)
                .map(|(&i, p)| (set.samples[i].category, p.category)),
        );
        confusion.merge(&cm);
        let fold_report = MetricsReport::from_confusion(cm);
        summaries.push(FoldSummary {
            fold: f,
            samples: fold_report.samples,
            accuracy: fold_report.accuracy,
            macro_f1: fold_report.macro_f1,
        });
        predictions.extend(test.iter().zip(preds).map(|(&i, prediction)| HeldOutPrediction {
            fold: f,
            truth: set.samples[i].category,
            prediction,
        }));
    }
    let mut report = MetricsReport::from_confusion(confusion);
    let accs: Vec<f64> = summaries.iter().map(|s| s.accuracy).collect();
    let mean = accs.iter().sum::<f64>() / k as f64;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k as f64;
    report.folds = summaries;
    report.fold_accuracy_mean = Some(mean);
    report.fold_accuracy_std = Some(var.sqrt());
    Ok(CrossValidation {
        folds,
        report,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    pub train_size: usize,
    pub test_size: usize,
    pub report: MetricsReport,
    pub predictions: Vec<Prediction>,
}

pub fn holdout_evaluate(set: &TrainingSet, trainer: &Trainer<'_>, test_fraction: f64, seed: u64) -> Result<Holdout> {
    let (train, test) = holdout_split(set, test_fraction, seed)?;
    let model = trainer(&set.subset(&train))?;
    let predictions = predict_indices(model.as_ref(), set, &test)?;
    let report = MetricsReport::from_confusion(ConfusionMatrix::from_pairs(
        test.iter()
            .zip(&predictions)
            .map(|(&i, p)| (set.samples[i].category, p.category)),
    ));
    Ok(Holdout {
        train_size: train.len(),
        test_size: test.len(),
        report,
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub depth: usize,
    pub train_accuracy: f64,
    pub accuracy: f64,
}

/// One tree per depth on a fixed stratified 70/30 split. The tree uses the
/// config's feature sampling without bootstrap, seeded by `config.seed`,
/// so each depth grows the same tree truncated at that level. Depth 0 is a
/// single root leaf.
pub fn depth_sweep(
    set: &TrainingSet,
    config: &TrainConfig,
    depths: impl IntoIterator<Item = usize>,
) -> Result<Vec<DepthPoint>> {
    let depths: Vec<usize> = depths.into_iter().collect();
    if depths.is_empty() {
        return Err(EvalError::EmptyDepthRange);
    }
    let (train_idx, test_idx) = holdout_split(set, DEFAULT_TEST_FRACTION, config.seed)?;
    let train = set.subset(&train_idx);
    let test = set.subset(&test_idx);
    let acc = |tree: &classifiers::DecisionNode, s: &TrainingSet| {
        s.samples
            .iter()
            .filter(|x| tree.predict(&x.values) == x.category)
            .count() as f64
            / s.len() as f64
    };
    depths
        .into_par_iter()
        .map(|depth| {
            let cfg = TrainConfig {
                max_depth: Some(depth),
                bootstrap: false,
                n_trees: 1,
                ..config.clone()
            };
            let tree = classifiers::train_tree(&train.samples, &cfg, config.seed)?;
            Ok(DepthPoint {
                depth,
                train_accuracy: acc(&tree, &train),
                accuracy: acc(&tree, &test),
            })
        })
        .collect()
}

pub fn depth_sweep_csv(points: &[DepthPoint]) -> String {
    let mut s = String::from("depth,accuracy,train_accuracy\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.depth, p.accuracy, p.train_accuracy);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenominatorMode {
    #[default]
    ReferenceCategorySize,
    IntersectionSize,
}

impl std::str::FromStr for DenominatorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "reference-category-size" | "reference" => Ok(DenominatorMode::ReferenceCategorySize),
            "intersection-size" | "intersection" => Ok(DenominatorMode::IntersectionSize),
            other => Err(format!("unknown denominator mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub reference: String,
    /// Model label ↔ reference label pairs that count as agreement.
    pub mapping: Vec<(String, String)>,
    /// Reference accounts whose label appears on the reference side of the mapping.
    pub reference_size: usize,
    /// Those reference accounts that the model also labeled.
    pub intersection: usize,
    pub matched: usize,
    pub denominator_mode: DenominatorMode,
    pub agreement: f64,
}

/// Agreement between model labels and an external reference labeling. Both
/// sides are plain label strings so either dataset can play either role.
pub fn cross_dataset_agreement(
    reference_name: &str,
    model: &BTreeMap<String, String>,
    reference: &BTreeMap<String, String>,
    mapping: &[(String, String)],
    mode: DenominatorMode,
) -> Result<AgreementReport> {
    let ref_side: BTreeSet<&str> = mapping.iter().map(|(_, r)| r.as_str()).collect();
    let pairs: BTreeSet<(&str, &str)> = mapping.iter().map(|(m, r)| (m.as_str(), r.as_str())).collect();
    let scoped: Vec<(&String, &String)> = reference
        .iter()
        .filter(|(_, l)| ref_side.contains(l.as_str()))
        .collect();
    let shared: Vec<(&str, &str)> = scoped
        .iter()
        .filter_map(|(id, r)| model.get(*id).map(|m| (m.as_str(), r.as_str())))
        .collect();
    if shared.is_empty() {
        return Err(EvalError::EmptyIntersection);
    }
    let matched = shared.iter().filter(|p| pairs.contains(p)).count();
    let denominator = match mode {
        DenominatorMode::ReferenceCategorySize => scoped.len(),
        DenominatorMode::IntersectionSize => shared.len(),
    };
    Ok(AgreementReport {
        reference: reference_name.to_string(),
        mapping: mapping.to_vec(),
        reference_size: scoped.len(),
        intersection: shared.len(),
        matched,
        denominator_mode: mode,
        agreement: matched as f64 / denominator as f64,
    })
}

/// Two-column `account_id,label` CSV of an external reference labeling.
pub fn read_reference_labels<R: Read>(input: R) -> Result<BTreeMap<String, String>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if let (Some(id), Some(label)) = (rec.get(0), rec.get(1)) {
            if !id.trim().is_empty() {
                out.insert(id.trim().to_string(), label.trim().to_string());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecheckReport {
    pub covered: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Keyed by coded category: (confirmed, covered).
    pub per_category: BTreeMap<Category, (usize, usize)>,
}

/// Accuracy of predictions over the accounts that were coded by hand after
/// the fact.
pub fn manual_recheck_accuracy(
    predictions: &BTreeMap<String, Category>,
    coded: &BTreeMap<String, Category>,
) -> Result<RecheckReport> {
    let mut per_category: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
    let (mut covered, mut correct) = (0, 0);
    for (id, truth) in coded {
        let Some(p) = predictions.get(id) else { continue };
        covered += 1;
        let e = per_category.entry(*truth).or_default();
        e.1 += 1;
        if p == truth {
            correct += 1;
            e.0 += 1;
        }
    }
    if covered == 0 {
        return Err(EvalError::NoOverlap);
    }
    Ok(RecheckReport {
        covered,
        correct,
        accuracy: correct as f64 / covered as f64,
        per_category,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub classifier: String,
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub status: String,
}

/// A classifier entered into a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Contender {
    Forest,
    Baseline(BaselineKind),
}

impl Contender {
    /// The forest, every baseline, and the SVM placeholder.
    pub const ALL: [Contender; 6] = [
        Contender::Forest,
        Contender::Baseline(BaselineKind::LogisticRegression),
        Contender::Baseline(BaselineKind::Knn),
        Contender::Baseline(BaselineKind::DecisionTree),
        Contender::Baseline(BaselineKind::NaiveBayes),
        Contender::Baseline(BaselineKind::Svm),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Contender::Forest => "random-forest",
            Contender::Baseline(k) => k.name(),
        }
    }
}

impl std::str::FromStr for Contender {
    type Err = ClassifierError;

    fn from_str(s: &str) -> Result<Self, ClassifierError> {
        match s {
            "random-forest" | "forest" => Ok(Contender::Forest),
            other => other.parse().map(Contender::Baseline),
        }
    }
}

impl TryFrom<String> for Contender {
    type Error = ClassifierError;

    fn try_from(s: String) -> Result<Self, ClassifierError> {
        s.parse()
    }
}

impl From<Contender> for String {
    fn from(c: Contender) -> String {
        c.name().to_string()
    }
}

/// Runs the same stratified CV for the forest and every baseline, sorted by
/// mean fold accuracy. SVM is listed as not implemented.
pub fn compare_classifiers(
    set: &TrainingSet,
    forest: &TrainConfig,
    params: &BaselineParams,
    k: usize,
    seed: u64,
) -> Result<Vec<ComparisonRow>> {
    compare_selected(set, forest, params, &Contender::ALL, k, seed)
}

/// [`compare_classifiers`] restricted to `contenders`. Duplicates are
/// ignored; unsupported kinds go last as "not implemented".
pub fn compare_selected(
    set: &TrainingSet,
    forest: &TrainConfig,
    params: &BaselineParams,
    contenders: &[Contender],
    k: usize,
    seed: u64,
) -> Result<Vec<ComparisonRow>> {
    let row = |name: &str, trainer: &Trainer<'_>| -> Result<ComparisonRow> {
        let cv = cross_validate(set, trainer, k, seed)?;
        Ok(ComparisonRow {
            classifier: name.to_string(),
            mean_accuracy: cv.report.fold_accuracy_mean,
            std_accuracy: cv.report.fold_accuracy_std,
            macro_f1: Some(cv.report.macro_f1),
            status: "ok".into(),
        })
    };
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    let mut unsupported = Vec::new();
    for &c in contenders {
        if !seen.insert(c.name()) {
            continue;
        }
        match c {
            Contender::Forest => rows.push(row(c.name(), &forest_trainer(forest.clone()))?),
            Contender::Baseline(kind) if BaselineKind::SUPPORTED.contains(&kind) => {
                rows.push(row(c.name(), &baseline_trainer(kind, params.clone()))?)
            }
            Contender::Baseline(_) => unsupported.push(ComparisonRow {
                classifier: c.name().into(),
                mean_accuracy: None,
                std_accuracy: None,
                macro_f1: None,
                status: "not implemented".into(),
            }),
        }
    }
    rows.sort_by(|a, b| {
        b.mean_accuracy
            .unwrap_or(0.0)
            .total_cmp(&a.mean_accuracy.unwrap_or(0.0))
            .then_with(|| a.classifier.cmp(&b.classifier))
    });
    rows.extend(unsupported);
    Ok(rows)
}

pub fn comparison_markdown(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("| Classifier | Mean accuracy | Std | Macro F1 | Status |\n|---|---|---|---|---|\n");
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            r.classifier,
            f(r.mean_accuracy),
            f(r.std_accuracy),
            f(r.macro_f1),
            r.status
        );
    }
    s
}
