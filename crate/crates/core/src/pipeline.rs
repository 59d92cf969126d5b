//! End-to-end orchestration: ingest, seed labels, propagate, featurize,
//! train, evaluate, predict and validate from one configuration.
//!
//! Every stage writes its artifact into the output directory. A stage run on
//! its own picks up upstream artifacts that already exist and recomputes the
//! ones that do not, so downstream work can be repeated without re-reading
//! the archive. Reports are deterministic for a fixed seed; wall-clock data
//! lives only in `run_metadata.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::classifiers::{train_forest, BaselineParams, Classifier, ForestModel, Prediction, TrainConfig, TrainingSet};
use crate::corpus::{
    parse_archive, Dataset, HashDetector, IngestOptions, IngestSummary, Schema, Timeframe, DEFAULT_BUFFER_CAP,
};
use crate::evaluation::{
    compare_selected, comparison_markdown, cross_dataset_agreement, cross_validate, depth_sweep, depth_sweep_csv,
    evaluate, forest_trainer, holdout_split, manual_recheck_accuracy, read_reference_labels, AgreementReport,
    ComparisonRow, ConfusionMatrix, Contender, CrossValidation, DenominatorMode, DepthPoint, Holdout, MetricsReport,
    RecheckReport, DEFAULT_FOLDS, DEFAULT_TEST_FRACTION,
};
use crate::features::{
    category_means, extract_all, normalize, pearson_matrix, read_feature_csv, write_feature_csv, CorrelationReport,
    FeatureCatalog, FeatureKind, FeatureRow, NormalizeAxis, DEFAULT_TARGET_COUNT,
};
use crate::labeling::{
    load_seed_labels, seed_labels, HashtagFootprintTable, RuleSet, SeedLabelSet, SeedReport, SeedSources,
    DEFAULT_MIN_HITS,
};
use crate::propagation::{propagate, PropagationConfig, PropagationReport};
use crate::synthgen::GroundTruth;
use crate::Category;

pub const LOCK_FILE: &str = ".footprint.lock";

pub mod artifacts {
    pub const CORPUS: &str = "corpus.jsonl";
    pub const INGEST_SUMMARY: &str = "ingest_summary.json";
    pub const SEED_LABELS: &str = "seed_labels.csv";
    pub const SEED_REPORT: &str = "seed_report.json";
    pub const LABELS: &str = "labels_after_propagation.csv";
    pub const PROPAGATION_REPORT: &str = "propagation_report.json";
    pub const CORRELATION: &str = "correlation_report.json";
    pub const FEATURES: &str = "features.csv";
    pub const DESCRIPTIVE: &str = "descriptive_stats.json";
    pub const MODEL: &str = "model.json";
    pub const HOLDOUT: &str = "holdout.json";
    pub const METRICS: &str = "metrics.json";
    pub const METRICS_MD: &str = "metrics.md";
    pub const CV_PREDICTIONS: &str = "cv_predictions.csv";
    pub const DEPTH_SWEEP: &str = "depth_sweep.csv";
    pub const TRUTH_METRICS: &str = "truth_metrics.json";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const COMPARISON: &str = "comparison.json";
    pub const COMPARISON_MD: &str = "comparison.md";
    pub const RUN_REPORT: &str = "run_report.json";
    pub const RUN_REPORT_MD: &str = "run_report.md";
    pub const RUN_METADATA: &str = "run_metadata.json";
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Label,
    Propagate,
    Featurize,
    Train,
    Evaluate,
    Predict,
    Validate,
    Compare,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Label => "label",
            Stage::Propagate => "propagate",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Predict => "predict",
            Stage::Validate => "validate",
            Stage::Compare => "compare",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether a stage failed on its input data or on its own work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Data,
    Failure,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{what} {} does not exist", path.display())]
    MissingPath { what: String, path: PathBuf },
    #[error("output directory {} is owned by another run (remove {} if it is stale)", dir.display(), dir.join(LOCK_FILE).display())]
    Locked { dir: PathBuf },
    #[error("{stage} stage failed")]
    Stage {
        stage: Stage,
        kind: FailureKind,
        #[source]
        source: BoxError,
    },
}

impl PipelineError {
    /// Process exit status: 1 usage, 2 data, 3 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::MissingPath { .. } | PipelineError::Locked { .. } => 2,
            PipelineError::Stage {
                kind: FailureKind::Data,
                ..
            } => 2,
            PipelineError::Stage {
                kind: FailureKind::Failure,
                ..
            } => 3,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn data_err<E: Into<BoxError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        kind: FailureKind::Data,
        source: e.into(),
    }
}

fn stage_err<E: Into<BoxError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        kind: FailureKind::Failure,
        source: e.into(),
    }
}

fn reconcile(stage: Stage, ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(stage_err(stage)(format!("count reconciliation failed: {}", what())))
    }
}

fn default_schema() -> Schema {
    Schema::Jsonl
}

fn default_buffer_cap() -> usize {
    DEFAULT_BUFFER_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default = "default_schema")]
    pub schema: Schema,
    /// Keep only tweets in this language.
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub start: Option<DateTime<Utc>>,
    #[serde(default)]
    pub end: Option<DateTime<Utc>>,
    #[serde(default = "default_buffer_cap")]
    pub buffer_cap: usize,
    /// Regex marking a profile description as hashed.
    #[serde(default)]
    pub hash_pattern: Option<String>,
}

impl DatasetConfig {
    pub fn new(path: impl Into<PathBuf>, schema: Schema) -> Self {
        DatasetConfig {
            path: path.into(),
            schema,
            language: None,
            start: None,
            end: None,
            buffer_cap: DEFAULT_BUFFER_CAP,
            hash_pattern: None,
        }
    }

    fn timeframe(&self) -> Result<Option<Timeframe>> {
        match (self.start, self.end) {
            (None, None) => Ok(None),
            (Some(s), Some(e)) if s < e => Ok(Some(Timeframe::new(s, e))),
            (Some(_), Some(_)) => Err(PipelineError::Config("dataset end must follow start".into())),
            _ => Err(PipelineError::Config(
                "dataset start and end must be given together".into(),
            )),
        }
    }

    /// Ingest options for `schema`, keeping this dataset's timeframe and
    /// hash detector.
    fn options(&self, schema: Schema, with_language: bool) -> Result<IngestOptions> {
        let mut o = IngestOptions::new(schema);
        o.timeframe = self.timeframe()?;
        o.buffer_cap = self.buffer_cap;
        if let Some(p) = &self.hash_pattern {
            o.hash_detector = HashDetector::new(p).map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if with_language {
            o.language_filter = self.language.clone();
        }
        Ok(o)
    }

    fn validate(&self) -> Result<()> {
        self.options(self.schema, true).map(drop)?;
        if self.buffer_cap == 0 {
            return Err(PipelineError::Config("buffer_cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    /// Hand-coded `account_id,category` file.
    pub coded: Option<PathBuf>,
    /// Description rules; the built-in set when absent.
    pub rules: Option<PathBuf>,
    /// Hashtag footprint table; the built-in table when absent.
    pub footprints: Option<PathBuf>,
    pub use_rules: bool,
    pub use_footprints: bool,
    pub min_hits: u64,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig {
            coded: None,
            rules: None,
            footprints: None,
            use_rules: true,
            use_footprints: true,
            min_hits: DEFAULT_MIN_HITS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub catalog: Vec<FeatureKind>,
    pub target_count: usize,
    pub normalization: NormalizeAxis,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            catalog: FeatureCatalog::default().features().to_vec(),
            target_count: DEFAULT_TARGET_COUNT,
            normalization: NormalizeAxis::Row,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub k: usize,
    pub test_fraction: f64,
    pub depths: Vec<usize>,
    /// Planted labels (`account_id,category`) for synthetic runs.
    pub ground_truth: Option<PathBuf>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            k: DEFAULT_FOLDS,
            test_fraction: DEFAULT_TEST_FRACTION,
            depths: (1..=20).collect(),
            ground_truth: None,
        }
    }
}

/// Which of our labels an external labeling is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    /// Seed or propagated label, else the model prediction.
    #[default]
    Final,
    /// Model prediction for every account.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementConfig {
    pub name: String,
    /// `account_id,label` file of the external labeling.
    pub labels: PathBuf,
    /// Pairs of (our category token, reference label) that agree.
    pub mapping: Vec<(String, String)>,
    #[serde(default)]
    pub denominator: DenominatorMode,
    #[serde(default)]
    pub source: LabelSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecheckConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    /// Hand-coded labels for accounts of `dataset`.
    pub coded: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Include the comparison in `run`.
    pub enabled: bool,
    pub classifiers: Vec<Contender>,
    pub baseline: BaselineParams,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            enabled: false,
            classifiers: Contender::ALL.to_vec(),
            baseline: BaselineParams::default(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("footprint-out")
}

/// The whole run as one declarative file. Relative paths in a loaded file
/// are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives every stochastic stage; overrides `train.seed` and
    /// `compare.baseline.seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub labeling: LabelingConfig,
    #[serde(default)]
    pub propagation: PropagationConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub agreements: Vec<AgreementConfig>,
    #[serde(default)]
    pub rechecks: Vec<RecheckConfig>,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn new(dataset: DatasetConfig, output_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            seed: 0,
            output_dir: output_dir.into(),
            threads: 0,
            dataset,
            labeling: LabelingConfig::default(),
            propagation: PropagationConfig::default(),
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            evaluation: EvaluationConfig::default(),
            agreements: Vec::new(),
            rechecks: Vec::new(),
            compare: CompareConfig::default(),
        }
    }

    /// Configuration for the files written by the synthetic generator,
    /// with paths relative to the directory holding them.
    pub fn for_synthetic(seed: u64) -> Self {
        let mut cfg = PipelineConfig::new(DatasetConfig::new("corpus.jsonl", Schema::Jsonl), "run");
        cfg.seed = seed;
        cfg.labeling.coded = Some("labels.csv".into());
        cfg.evaluation.ground_truth = Some("ground_truth.csv".into());
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        rebase(base, &mut self.output_dir);
        rebase(base, &mut self.dataset.path);
        for p in [
            &mut self.labeling.coded,
            &mut self.labeling.rules,
            &mut self.labeling.footprints,
        ]
        .into_iter()
        .flatten()
        {
            rebase(base, p);
        }
        if let Some(p) = &mut self.evaluation.ground_truth {
            rebase(base, p);
        }
        for a in &mut self.agreements {
            rebase(base, &mut a.labels);
        }
        for r in &mut self.rechecks {
            rebase(base, &mut r.dataset.path);
            rebase(base, &mut r.coded);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serialises to TOML")
    }

    /// The training configuration with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn baseline_params(&self) -> BaselineParams {
        BaselineParams {
            seed: self.seed,
            ..self.compare.baseline.clone()
        }
    }

    pub fn catalog(&self) -> Result<FeatureCatalog> {
        FeatureCatalog::new(self.features.catalog.clone()).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.dataset.validate()?;
        for r in &self.rechecks {
            r.dataset.validate()?;
        }
        let catalog = self.catalog()?;
        if catalog.is_empty() {
            return bad("feature catalog is empty".into());
        }
        let t = self.features.target_count;
        if t == 0 || t > catalog.len() {
            return bad(format!("target_count {t} outside [1, {}]", catalog.len()));
        }
        self.train
            .validate(t)
            .map_err(|e| PipelineError::Config(format!("train: {e}")))?;
        if self.propagation.subspan_months == 0 {
            return bad("subspan_months must be at least 1".into());
        }
        if self.evaluation.k < 2 {
            return bad("k must be at least 2".into());
        }
        let f = self.evaluation.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return bad(format!("test_fraction {f} outside (0, 1)"));
        }
        if self.evaluation.depths.is_empty() {
            return bad("depth sweep needs at least one depth".into());
        }
        let mut names: Vec<&str> = self.agreements.iter().map(|a| a.name.as_str()).collect();
        names.extend(self.rechecks.iter().map(|r| r.name.as_str()));
        for n in &names {
            if n.is_empty() || !n.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return bad(format!("validation name {n:?} must be non-empty [A-Za-z0-9_-]"));
            }
        }
        for a in &self.agreements {
            if a.mapping.is_empty() {
                return bad(format!("agreement {:?} has an empty mapping", a.name));
            }
        }
        Ok(())
    }

    /// Every input path the run will read, with a description.
    pub fn input_paths(&self) -> Vec<(String, &Path)> {
        let mut v = vec![("dataset".to_string(), self.dataset.path.as_path())];
        let l = &self.labeling;
        if let Some(p) = &l.coded {
            v.push(("coded labels file".into(), p));
        }
        if let (true, Some(p)) = (l.use_rules, &l.rules) {
            v.push(("rules file".into(), p));
        }
        if let (true, Some(p)) = (l.use_footprints, &l.footprints) {
            v.push(("footprint table".into(), p));
        }
        if let Some(p) = &self.evaluation.ground_truth {
            v.push(("ground-truth file".into(), p));
        }
        for a in &self.agreements {
            v.push((format!("agreement {:?} labels", a.name), &a.labels));
        }
        for r in &self.rechecks {
            v.push((format!("recheck {:?} dataset", r.name), &r.dataset.path));
            v.push((format!("recheck {:?} coded labels", r.name), &r.coded));
        }
        v
    }

    pub fn check_paths(&self) -> Result<()> {
        for (what, p) in self.input_paths() {
            if !p.exists() {
                return Err(PipelineError::MissingPath {
                    what,
                    path: p.to_path_buf(),
                });
            }
        }
        Ok(())
    }
}

/// Exclusive ownership of an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(stage_err(Stage::Report))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked { dir: dir.to_path_buf() })
            }
            Err(e) => Err(stage_err(Stage::Report)(e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Option<Stage>,
    pub inputs: BTreeMap<String, u64>,
    pub outputs: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<String>,
}

impl StageReport {
    fn new(stage: Stage) -> Self {
        StageReport {
            stage: Some(stage),
            ..Default::default()
        }
    }

    fn input(&mut self, k: &str, v: impl TryInto<u64>) -> &mut Self {
        self.inputs.insert(k.into(), v.try_into().unwrap_or(u64::MAX));
        self
    }

    fn output(&mut self, k: &str, v: impl TryInto<u64>) -> &mut Self {
        self.outputs.insert(k.into(), v.try_into().unwrap_or(u64::MAX));
        self
    }
}

/// Counts per category, Uncategorized included.
pub type Census = BTreeMap<Category, usize>;

fn census(labels: impl IntoIterator<Item = Category>, accounts: usize) -> Census {
    let mut c: Census = Category::ALL.iter().map(|&k| (k, 0)).collect();
    c.insert(Category::Uncategorized, 0);
    let mut n = 0;
    for l in labels {
        *c.entry(l).or_default() += 1;
        n += 1;
    }
    *c.entry(Category::Uncategorized).or_default() += accounts.saturating_sub(n);
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCensus {
    pub accounts: usize,
    pub seed_labeled: usize,
    pub seed: Census,
    pub labeled_after_propagation: usize,
    pub uncategorized_after_propagation: usize,
    pub after_propagation: Census,
    /// Accounts labeled by the model after propagation left them open.
    pub model_labeled: usize,
    pub final_labels: Census,
}

/// Ground-truth scoring of a synthetic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthReport {
    /// Held-out CV predictions against planted categories.
    pub cv: MetricsReport,
    /// Final label of every account with a trainable final label.
    pub final_labels: MetricsReport,
    pub hashed_accounts: usize,
    pub hashed_labeled: usize,
    pub hashed_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRecheck {
    pub name: String,
    pub accounts: usize,
    pub predicted: usize,
    pub report: RecheckReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSummary {
    pub train_size: usize,
    pub test_size: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub seed: u64,
    pub stages: Vec<StageReport>,
    pub census: LabelCensus,
    pub feature_names: Vec<String>,
    pub selected_features: Vec<String>,
    /// Raw feature means per category, in `feature_names` order.
    pub descriptive: BTreeMap<Category, Vec<f64>>,
    pub cv: MetricsReport,
    pub holdout: HoldoutSummary,
    pub depth_sweep: Vec<DepthPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthReport>,
    pub agreements: Vec<AgreementReport>,
    pub rechecks: Vec<NamedRecheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Vec<ComparisonRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub threads: usize,
    pub stage_millis: BTreeMap<Stage, u128>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub metadata: RunMetadata,
    pub model: ForestModel,
}

pub struct Ingested {
    pub dataset: Dataset,
    pub summary: IngestSummary,
}

pub struct Labeled {
    pub seeds: SeedLabelSet,
    pub report: SeedReport,
}

pub struct Propagated {
    pub labels: SeedLabelSet,
    pub report: PropagationReport,
}

pub struct Featurized {
    pub rows: Vec<FeatureRow>,
    pub correlation: CorrelationReport,
    pub descriptive: BTreeMap<Category, Vec<f64>>,
}

impl Featurized {
    pub fn selected(&self) -> Vec<String> {
        self.correlation
            .selection
            .as_ref()
            .map(|s| s.selected.clone())
            .unwrap_or_else(|| self.correlation.names.clone())
    }
}

pub struct Trained {
    pub model: ForestModel,
    pub holdout: Holdout,
}

/// Final labels and the dataset, for scoring labels against ground truth.
#[derive(Clone, Copy)]
pub struct TruthContext<'a> {
    pub final_labels: &'a [AccountPrediction],
    pub dataset: &'a Dataset,
}

pub struct Evaluated {
    pub cv: CrossValidation,
    pub depth_sweep: Vec<DepthPoint>,
    pub truth: Option<TruthReport>,
}

/// Where an account's final label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalSource {
    CodedFile,
    DescriptionRule,
    HashtagFootprint,
    Propagated,
    Model,
    /// No label and an all-zero feature vector.
    None,
}

impl FinalSource {
    pub fn token(self) -> &'static str {
        match self {
            FinalSource::CodedFile => "coded-file",
            FinalSource::DescriptionRule => "description-rule",
            FinalSource::HashtagFootprint => "hashtag-footprint",
            FinalSource::Propagated => "propagated",
            FinalSource::Model => "model",
            FinalSource::None => "none",
        }
    }
}

impl std::str::FromStr for FinalSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [
            FinalSource::CodedFile,
            FinalSource::DescriptionRule,
            FinalSource::HashtagFootprint,
            FinalSource::Propagated,
            FinalSource::Model,
            FinalSource::None,
        ]
        .into_iter()
        .find(|f| f.token() == s)
        .ok_or_else(|| format!("unknown label source {s:?}"))
    }
}

impl From<crate::labeling::Provenance> for FinalSource {
    fn from(p: crate::labeling::Provenance) -> Self {
        use crate::labeling::Provenance as P;
        match p {
            P::CodedFile => FinalSource::CodedFile,
            P::DescriptionRule => FinalSource::DescriptionRule,
            P::HashtagFootprint => FinalSource::HashtagFootprint,
            P::Propagated => FinalSource::Propagated,
        }
    }
}

/// One row of `predictions.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountPrediction {
    pub account_id: String,
    pub source: FinalSource,
    pub category: Category,
    /// Model output, absent for all-zero feature vectors.
    pub predicted: Option<Prediction>,
}

const PREDICTION_HEADER: [&str; 8] = [
    "account_id",
    "source",
    "category",
    "predicted",
    "p_FakeNews",
    "p_Organizations",
    "p_PoliticalAffiliates",
    "p_DefaultIndividuals",
];

pub fn write_predictions_csv<W: Write>(rows: &[AccountPrediction], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PREDICTION_HEADER)?;
    for r in rows {
        let mut rec = vec![r.account_id.clone(), r.source.token().into(), r.category.token().into()];
        match &r.predicted {
            Some(p) => {
                rec.push(p.category.token().into());
                rec.extend(p.distribution.iter().map(|v| v.to_string()));
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 5)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions_csv<R: std::io::Read>(input: R) -> Result<Vec<AccountPrediction>, BoxError> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().ne(PREDICTION_HEADER) {
        return Err("unexpected predictions header".into());
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let predicted = if field(3).is_empty() {
            None
        } else {
            let mut distribution = [0.0; 4];
            for (j, d) in distribution.iter_mut().enumerate() {
                *d = field(4 + j).parse()?;
            }
            Some(Prediction {
                account_id: field(0).into(),
                category: field(3).parse()?,
                distribution,
            })
        };
        out.push(AccountPrediction {
            account_id: field(0).into(),
            source: field(1).parse()?,
            category: field(2).parse()?,
            predicted,
        });
    }
    Ok(out)
}

fn write_atomic(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut BufWriter<&mut NamedTempFile>) -> Result<(), BoxError>,
) -> Result<(), BoxError> {
    let mut tmp = NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(&mut tmp);
        f(&mut w)?;
        w.flush()?;
    }
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), BoxError> {
    write_atomic(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), BoxError> {
    write_atomic(dir, name, |w| Ok(w.write_all(text.as_bytes())?))
}

fn open(path: &Path) -> Result<BufReader<File>, BoxError> {
    Ok(BufReader::new(File::open(path)?))
}

/// Runs stages against one configuration and output directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
}

impl Pipeline {
    /// Validates the configuration and that every input path exists.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        config.check_paths()?;
        Ok(Pipeline { config })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn output_dir(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    fn has(&self, name: &str) -> bool {
        self.artifact(name).is_file()
    }

    fn save_json<T: Serialize>(&self, stage: Stage, report: &mut StageReport, name: &str, v: &T) -> Result<()> {
        write_json(self.output_dir(), name, v).map_err(stage_err(stage))?;
        report.artifacts.push(name.into());
        Ok(())
    }

    fn save_text(&self, stage: Stage, report: &mut StageReport, name: &str, text: &str) -> Result<()> {
        write_text(self.output_dir(), name, text).map_err(stage_err(stage))?;
        report.artifacts.push(name.into());
        Ok(())
    }

    fn save_with(
        &self,
        stage: Stage,
        report: &mut StageReport,
        name: &str,
        f: impl FnOnce(&mut BufWriter<&mut NamedTempFile>) -> Result<(), BoxError>,
    ) -> Result<()> {
        write_atomic(self.output_dir(), name, f).map_err(stage_err(stage))?;
        report.artifacts.push(name.into());
        Ok(())
    }

    /// Runs `f` on a pool with the configured thread count.
    pub fn install<T: Send>(&self, f: impl FnOnce(&Self) -> T + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.threads)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
        Ok(pool.install(|| f(self)))
    }

    pub fn lock(&self) -> Result<OutputLock> {
        OutputLock::acquire(self.output_dir())
    }

    pub fn ingest_dataset(cfg: &DatasetConfig) -> Result<(Dataset, IngestSummary)> {
        parse_archive(&cfg.path, cfg.options(cfg.schema, true)?).map_err(data_err(Stage::Ingest))
    }

    pub fn ingest(&self) -> Result<(Ingested, StageReport)> {
        let s = Stage::Ingest;
        let (dataset, summary) = Self::ingest_dataset(&self.config.dataset)?;
        let mut r = StageReport::new(s);
        r.input("rows_read", summary.rows_read)
            .output("tweets", summary.tweets)
            .output("accounts", summary.accounts)
            .output("hashed_accounts", summary.hashed_accounts)
            .output("rows_filtered_language", summary.rows_filtered_language)
            .output("rows_rejected", summary.rows_rejected);
        if summary.rows_rejected > 0 {
            r.warnings.push(format!(
                "{} rows rejected: {:?}",
                summary.rows_rejected, summary.rejected_by_reason
            ));
        }
        if dataset.accounts().is_empty() {
            return Err(data_err(s)("no accounts survived ingest"));
        }
        self.save_with(s, &mut r, artifacts::CORPUS, |w| Ok(dataset.write_jsonl(w)?))?;
        self.save_json(s, &mut r, artifacts::INGEST_SUMMARY, &summary)?;
        Ok((Ingested { dataset, summary }, r))
    }

    /// Reloads the canonical corpus written by [`Pipeline::ingest`].
    pub fn load_corpus(&self) -> Result<Dataset> {
        let opts = self.config.dataset.options(Schema::Jsonl, false)?;
        let (ds, _) = parse_archive(&self.artifact(artifacts::CORPUS), opts).map_err(data_err(Stage::Ingest))?;
        Ok(ds)
    }

    pub fn label(&self, dataset: &Dataset) -> Result<(Labeled, StageReport)> {
        let s = Stage::Label;
        let l = &self.config.labeling;
        let mut r = StageReport::new(s);
        let coded = match &l.coded {
            Some(p) => {
                let load = load_seed_labels(p).map_err(data_err(s))?;
                if !load.rejected.is_empty() {
                    r.warnings.push(format!(
                        "{} coded rows with unknown category tokens",
                        load.rejected.len()
                    ));
                }
                r.input("coded_rows", load.labels.len());
                Some(load.labels)
            }
            None => None,
        };
        let rules = match (l.use_rules, &l.rules) {
            (false, _) => None,
            (true, Some(p)) => Some(RuleSet::load(p).map_err(data_err(s))?),
            (true, None) => Some(RuleSet::default_rules()),
        };
        let footprints = match (l.use_footprints, &l.footprints) {
            (false, _) => None,
            (true, Some(p)) => Some(HashtagFootprintTable::load(p).map_err(data_err(s))?),
            (true, None) => Some(HashtagFootprintTable::default_table()),
        };
        let sources = SeedSources {
            coded: coded.as_ref(),
            rules: rules.as_ref(),
            footprints: footprints.as_ref(),
            min_hits: l.min_hits,
        };
        let (seeds, report) = seed_labels(dataset, &sources).map_err(data_err(s))?;
        let accounts = dataset.accounts().len();
        reconcile(
            s,
            report.labeled + report.unlabeled == accounts && report.labeled == seeds.len(),
            || {
                format!(
                    "labeled {} + unlabeled {} vs {accounts} accounts",
                    report.labeled, report.unlabeled
                )
            },
        )?;
        if report.coded_not_in_dataset > 0 {
            r.warnings.push(format!(
                "{} coded accounts are not in the dataset",
                report.coded_not_in_dataset
            ));
        }
        r.input("accounts", accounts)
            .output("labeled", report.labeled)
            .output("unlabeled", report.unlabeled)
            .output("unlabeled_hashed", report.unlabeled_hashed);
        self.save_with(s, &mut r, artifacts::SEED_LABELS, |w| Ok(seeds.write_csv(w)?))?;
        self.save_json(s, &mut r, artifacts::SEED_REPORT, &report)?;
        Ok((Labeled { seeds, report }, r))
    }

    pub fn propagate(&self, dataset: &Dataset, seeds: &SeedLabelSet) -> Result<(Propagated, StageReport)> {
        let s = Stage::Propagate;
        let (labels, report) = propagate(dataset, seeds, &self.config.propagation).map_err(stage_err(s))?;
        let accounts = dataset.accounts().len();
        reconcile(s, report.labeled_before == seeds.len(), || {
            format!("labeled_before {} vs {} seeds", report.labeled_before, seeds.len())
        })?;
        reconcile(
            s,
            report.labeled_before + report.propagated == report.labeled_after,
            || {
                format!(
                    "{} + {} != {}",
                    report.labeled_before, report.propagated, report.labeled_after
                )
            },
        )?;
        reconcile(s, report.labeled_after + report.uncategorized_after == accounts, || {
            format!(
                "{} + {} != {accounts}",
                report.labeled_after, report.uncategorized_after
            )
        })?;
        reconcile(s, labels.len() == report.labeled_after, || {
            format!("{} labels vs labeled_after {}", labels.len(), report.labeled_after)
        })?;
        let mut r = StageReport::new(s);
        r.input("accounts", accounts)
            .input("labeled_before", report.labeled_before)
            .output("propagated", report.propagated)
            .output("labeled_after", report.labeled_after)
            .output("uncategorized_after", report.uncategorized_after)
            .output("subspans", report.subspan_count);
        let skipped = report.subspans.iter().filter(|x| x.skipped).count();
        if skipped > 0 {
            r.warnings
                .push(format!("{skipped} subspan(s) had no categorized activity"));
        }
        self.save_with(s, &mut r, artifacts::LABELS, |w| Ok(labels.write_csv(w)?))?;
        self.save_json(s, &mut r, artifacts::PROPAGATION_REPORT, &report)?;
        Ok((Propagated { labels, report }, r))
    }

    pub fn featurize(&self, dataset: &Dataset, labels: &SeedLabelSet) -> Result<(Featurized, StageReport)> {
        let s = Stage::Featurize;
        let catalog = self.config.catalog()?;
        let raw = extract_all(dataset, &catalog).map_err(stage_err(s))?;
        let cats = labels.categories();
        let label_of = |id: &str| cats.get(id).copied().filter(|c| c.index().is_some());

        let raw_rows: Vec<FeatureRow> = raw
            .iter()
            .map(|v| FeatureRow {
                category: label_of(&v.account_id),
                vector: v.clone(),
            })
            .collect();
        let descriptive = category_means(&raw_rows);
        let training: Vec<_> = raw_rows
            .iter()
            .filter(|r| r.category.is_some() && !r.vector.degenerate)
            .map(|r| r.vector.clone())
            .collect();
        let mut correlation = pearson_matrix(&training).map_err(stage_err(s))?;
        let selected = correlation
            .select(self.config.features.target_count)
            .map_err(stage_err(s))?
            .selected
            .clone();
        let projected = raw
            .iter()
            .map(|v| v.project(&selected))
            .collect::<Result<Vec<_>, _>>()
            .map_err(stage_err(s))?;
        let rows: Vec<FeatureRow> = normalize(&projected, self.config.features.normalization)
            .into_iter()
            .map(|vector| FeatureRow {
                category: label_of(&vector.account_id),
                vector,
            })
            .collect();
        reconcile(s, rows.len() == dataset.accounts().len(), || {
            format!("{} rows for {} accounts", rows.len(), dataset.accounts().len())
        })?;

        let mut r = StageReport::new(s);
        let degenerate = rows.iter().filter(|x| x.vector.degenerate).count();
        r.input("accounts", rows.len())
            .input("candidate_features", catalog.len())
            .output("selected_features", selected.len())
            .output("training_rows", training.len())
            .output("degenerate_rows", degenerate);
        if selected.len() < self.config.features.target_count {
            r.warnings.push(format!(
                "only {} non-constant features for target {}",
                selected.len(),
                self.config.features.target_count
            ));
        }
        self.save_json(s, &mut r, artifacts::CORRELATION, &correlation)?;
        self.save_json(s, &mut r, artifacts::DESCRIPTIVE, &descriptive)?;
        self.save_with(s, &mut r, artifacts::FEATURES, |w| Ok(write_feature_csv(&rows, w)?))?;
        Ok((
            Featurized {
                rows,
                correlation,
                descriptive,
            },
            r,
        ))
    }

    /// Forest trained on the training share of a stratified holdout split;
    /// the rest is scored.
    pub fn train(&self, rows: &[FeatureRow]) -> Result<(Trained, StageReport)> {
        let s = Stage::Train;
        let set = TrainingSet::from_rows(rows);
        let cfg = self.config.train_config();
        let (train_idx, test_idx) =
            holdout_split(&set, self.config.evaluation.test_fraction, self.config.seed).map_err(stage_err(s))?;
        let model = train_forest(&set.subset(&train_idx), &cfg).map_err(stage_err(s))?;
        let predictions = test_idx
            .iter()
            .map(|&i| model.predict_values(&set.samples[i].account_id, &set.samples[i].values))
            .collect::<Result<Vec<_>, _>>()
            .map_err(stage_err(s))?;
        let report = MetricsReport::from_confusion(ConfusionMatrix::from_pairs(
            test_idx
                .iter()
                .zip(&predictions)
                .map(|(&i, p)| (set.samples[i].category, p.category)),
        ));
        let holdout = Holdout {
            train_size: train_idx.len(),
            test_size: test_idx.len(),
            report,
            predictions,
        };
        let mut r = StageReport::new(s);
        r.input("training_rows", set.len())
            .output("train_size", holdout.train_size)
            .output("test_size", holdout.test_size)
            .output("trees", model.trees.len());
        let json = model.to_json().map_err(stage_err(s))?;
        self.save_text(s, &mut r, artifacts::MODEL, &json)?;
        self.save_json(s, &mut r, artifacts::HOLDOUT, &holdout)?;
        Ok((Trained { model, holdout }, r))
    }

    pub fn load_model(&self) -> Result<ForestModel> {
        let text = fs::read_to_string(self.artifact(artifacts::MODEL)).map_err(data_err(Stage::Train))?;
        ForestModel::from_json(&text).map_err(data_err(Stage::Train))
    }

    /// Stratified k-fold CV over every labeled row, the depth sweep, and
    /// ground-truth scoring when configured.
    pub fn evaluate(&self, rows: &[FeatureRow], context: Option<TruthContext<'_>>) -> Result<(Evaluated, StageReport)> {
        let s = Stage::Evaluate;
        let set = TrainingSet::from_rows(rows);
        let cfg = self.config.train_config();
        let ev = &self.config.evaluation;
        let cv = cross_validate(&set, &forest_trainer(cfg.clone()), ev.k, self.config.seed).map_err(stage_err(s))?;
        let sweep = depth_sweep(&set, &cfg, ev.depths.iter().copied()).map_err(stage_err(s))?;
        let truth = match &ev.ground_truth {
            Some(p) => Some(self.truth_report(p, &cv, context)?),
            None => None,
        };

        let mut r = StageReport::new(s);
        r.input("training_rows", set.len())
            .output("folds", ev.k)
            .output("depths", sweep.len());
        self.save_json(s, &mut r, artifacts::METRICS, &cv.report)?;
        self.save_text(s, &mut r, artifacts::METRICS_MD, &cv.report.to_markdown())?;
        self.save_with(s, &mut r, artifacts::CV_PREDICTIONS, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["account_id", "fold", "truth", "predicted"])?;
            for h in &cv.predictions {
                c.write_record([
                    h.prediction.account_id.as_str(),
                    &h.fold.to_string(),
                    h.truth.token(),
                    h.prediction.category.token(),
                ])?;
            }
            c.flush()?;
            Ok(())
        })?;
        self.save_text(s, &mut r, artifacts::DEPTH_SWEEP, &depth_sweep_csv(&sweep))?;
        if let Some(t) = &truth {
            self.save_json(s, &mut r, artifacts::TRUTH_METRICS, t)?;
        }
        Ok((
            Evaluated {
                cv,
                depth_sweep: sweep,
                truth,
            },
            r,
        ))
    }

    fn truth_report(
        &self,
        path: &Path,
        cv: &CrossValidation,
        context: Option<TruthContext<'_>>,
    ) -> Result<TruthReport> {
        let (final_labels, dataset) = match context {
            Some(c) => (Some(c.final_labels), Some(c.dataset)),
            None => (None, None),
        };
        let s = Stage::Evaluate;
        let truth = GroundTruth::read_csv(open(path).map_err(data_err(s))?).map_err(data_err(s))?;
        let score = |preds: Vec<Prediction>| -> Result<MetricsReport> {
            let scoped: BTreeMap<String, Category> = preds
                .iter()
                .filter_map(|p| truth.get(&p.account_id).map(|c| (p.account_id.clone(), c)))
                .filter(|(_, c)| c.index().is_some())
                .collect();
            let preds: Vec<Prediction> = preds
                .into_iter()
                .filter(|p| scoped.contains_key(&p.account_id))
                .collect();
            evaluate(&scoped, &preds).map_err(stage_err(s))
        };
        let cv_report = score(cv.predictions.iter().map(|h| h.prediction.clone()).collect())?;

        let labels: Vec<&AccountPrediction> = match final_labels {
            Some(f) => f.iter().collect(),
            None => Vec::new(),
        };
        let final_preds: Vec<Prediction> = labels
            .iter()
            .filter(|a| a.category.index().is_some())
            .map(|a| Prediction::from_distribution(a.account_id.clone(), one_hot(a.category)))
            .collect();
        let final_report = if final_preds.is_empty() {
            MetricsReport::from_confusion(ConfusionMatrix::default())
        } else {
            score(final_preds)?
        };

        let dataset_hashed: BTreeSet<&str> = match dataset {
            Some(ds) => ds
                .accounts()
                .values()
                .filter(|a| a.is_hashed)
                .map(|a| a.account_id.as_str())
                .collect(),
            None => BTreeSet::new(),
        };
        let mut hashed_labeled = 0;
        let mut hashed_correct = 0;
        for a in &labels {
            if !dataset_hashed.contains(a.account_id.as_str()) {
                continue;
            }
            if matches!(a.source, FinalSource::HashtagFootprint | FinalSource::Propagated) {
                hashed_labeled += 1;
                if truth.get(&a.account_id) == Some(a.category) {
                    hashed_correct += 1;
                }
            }
        }
        Ok(TruthReport {
            cv: cv_report,
            final_labels: final_report,
            hashed_accounts: dataset_hashed.len(),
            hashed_labeled,
            hashed_correct,
        })
    }

    /// Final label for every account: its seed or propagated label, else
    /// the model's prediction, else Uncategorized.
    pub fn predict(
        &self,
        labels: &SeedLabelSet,
        rows: &[FeatureRow],
        model: &ForestModel,
    ) -> Result<(Vec<AccountPrediction>, StageReport)> {
        let s = Stage::Predict;
        let out = rows
            .iter()
            .map(|row| {
                let v = &row.vector;
                let predicted = if v.degenerate {
                    None
                } else {
                    Some(model.predict(v).map_err(stage_err(s))?)
                };
                let (source, category) = match labels.get(&v.account_id) {
                    Some(l) => (FinalSource::from(l.provenance), l.category),
                    None => match &predicted {
                        Some(p) => (FinalSource::Model, p.category),
                        None => (FinalSource::None, Category::Uncategorized),
                    },
                };
                Ok(AccountPrediction {
                    account_id: v.account_id.clone(),
                    source,
                    category,
                    predicted,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model_labeled = out.iter().filter(|a| a.source == FinalSource::Model).count();
        let unlabelable = out.iter().filter(|a| a.source == FinalSource::None).count();
        reconcile(s, out.len() - model_labeled - unlabelable == labels.len(), || {
            format!(
                "{} accounts, {model_labeled} model, {unlabelable} none, {} labels",
                out.len(),
                labels.len()
            )
        })?;
        let mut r = StageReport::new(s);
        r.input("accounts", out.len())
            .input("labeled", labels.len())
            .output("model_labeled", model_labeled)
            .output("unlabelable", unlabelable);
        if unlabelable > 0 {
            r.warnings.push(format!(
                "{unlabelable} account(s) have all-zero features and stay uncategorized"
            ));
        }
        self.save_with(s, &mut r, artifacts::PREDICTIONS, |w| {
            Ok(write_predictions_csv(&out, w)?)
        })?;
        Ok((out, r))
    }

    pub fn load_predictions(&self) -> Result<Vec<AccountPrediction>> {
        let s = Stage::Predict;
        read_predictions_csv(open(&self.artifact(artifacts::PREDICTIONS)).map_err(data_err(s))?).map_err(data_err(s))
    }

    /// Cross-dataset agreements and manual rechecks.
    pub fn validate_labels(
        &self,
        predictions: &[AccountPrediction],
        model: &ForestModel,
    ) -> Result<(Vec<AgreementReport>, Vec<NamedRecheck>, StageReport)> {
        let s = Stage::Validate;
        let mut r = StageReport::new(s);
        let mut agreements = Vec::new();
        for a in &self.config.agreements {
            let reference = read_reference_labels(open(&a.labels).map_err(data_err(s))?).map_err(data_err(s))?;
            let ours: BTreeMap<String, String> = predictions
                .iter()
                .filter_map(|p| {
                    let c = match a.source {
                        LabelSource::Final => Some(p.category),
                        LabelSource::Predicted => p.predicted.as_ref().map(|x| x.category),
                    }?;
                    Some((p.account_id.clone(), c.token().to_string()))
                })
                .collect();
            let report =
                cross_dataset_agreement(&a.name, &ours, &reference, &a.mapping, a.denominator).map_err(data_err(s))?;
            r.output(&format!("agreement_{}_matched", a.name), report.matched);
            self.save_json(s, &mut r, &format!("agreement_{}.json", a.name), &report)?;
            agreements.push(report);
        }
        let mut rechecks = Vec::new();
        for rc in &self.config.rechecks {
            let (ds, _) = Self::ingest_dataset(&rc.dataset).map_err(|e| match e {
                PipelineError::Stage { kind, source, .. } => PipelineError::Stage { stage: s, kind, source },
                other => other,
            })?;
            let catalog = FeatureCatalog::from_names(&model.feature_names).map_err(stage_err(s))?;
            let vectors = extract_all(&ds, &catalog).map_err(stage_err(s))?;
            let preds: BTreeMap<String, Category> = normalize(&vectors, self.config.features.normalization)
                .iter()
                .filter(|v| !v.degenerate)
                .map(|v| model.predict(v).map(|p| (p.account_id, p.category)))
                .collect::<Result<_, _>>()
                .map_err(stage_err(s))?;
            let coded = load_seed_labels(&rc.coded).map_err(data_err(s))?.labels.categories();
            let report = manual_recheck_accuracy(&preds, &coded).map_err(data_err(s))?;
            let named = NamedRecheck {
                name: rc.name.clone(),
                accounts: ds.accounts().len(),
                predicted: preds.len(),
                report,
            };
            r.output(&format!("recheck_{}_covered", rc.name), named.report.covered);
            self.save_json(s, &mut r, &format!("recheck_{}.json", rc.name), &named)?;
            rechecks.push(named);
        }
        r.input("accounts", predictions.len());
        Ok((agreements, rechecks, r))
    }

    /// Same CV protocol for the forest and the configured baselines.
    pub fn compare(&self, rows: &[FeatureRow]) -> Result<(Vec<ComparisonRow>, StageReport)> {
        let s = Stage::Compare;
        let set = TrainingSet::from_rows(rows);
        let table = compare_selected(
            &set,
            &self.config.train_config(),
            &self.config.baseline_params(),
            &self.config.compare.classifiers,
            self.config.evaluation.k,
            self.config.seed,
        )
        .map_err(stage_err(s))?;
        let mut r = StageReport::new(s);
        r.input("training_rows", set.len()).output("classifiers", table.len());
        self.save_json(s, &mut r, artifacts::COMPARISON, &table)?;
        self.save_text(s, &mut r, artifacts::COMPARISON_MD, &comparison_markdown(&table))?;
        Ok((table, r))
    }

    /// Every stage in order, from scratch, under the output lock and the
    /// configured thread pool.
    pub fn run(&self) -> Result<RunOutcome> {
        let _lock = self.lock()?;
        self.install(|p| p.run_unlocked())?
    }

    fn run_unlocked(&self) -> Result<RunOutcome> {
        let started_at = Utc::now();
        let mut millis = BTreeMap::new();
        let mut stages = Vec::new();
        let mut timed = |stage: Stage, t: Instant, r: StageReport| {
            log::info!("{stage}: done in {:?}", t.elapsed());
            millis.insert(stage, t.elapsed().as_millis());
            stages.push(r);
        };

        let t = Instant::now();
        let (ing, r) = self.ingest()?;
        timed(Stage::Ingest, t, r);
        let ds = &ing.dataset;
        let t = Instant::now();
        let (lab, r) = self.label(ds)?;
        timed(Stage::Label, t, r);
        let t = Instant::now();
        let (prop, r) = self.propagate(ds, &lab.seeds)?;
        timed(Stage::Propagate, t, r);
        let t = Instant::now();
        let (feat, r) = self.featurize(ds, &prop.labels)?;
        timed(Stage::Featurize, t, r);
        let t = Instant::now();
        let (trained, r) = self.train(&feat.rows)?;
        timed(Stage::Train, t, r);
        let t = Instant::now();
        let (preds, r) = self.predict(&prop.labels, &feat.rows, &trained.model)?;
        timed(Stage::Predict, t, r);
        let t = Instant::now();
        let context = TruthContext {
            final_labels: &preds,
            dataset: ds,
        };
        let (ev, r) = self.evaluate(&feat.rows, Some(context))?;
        timed(Stage::Evaluate, t, r);
        let t = Instant::now();
        let (agreements, rechecks, r) = self.validate_labels(&preds, &trained.model)?;
        timed(Stage::Validate, t, r);
        let comparison = if self.config.compare.enabled {
            let t = Instant::now();
            let (table, r) = self.compare(&feat.rows)?;
            timed(Stage::Compare, t, r);
            Some(table)
        } else {
            None
        };

        let accounts = ds.accounts().len();
        let census = LabelCensus {
            accounts,
            seed_labeled: lab.seeds.len(),
            seed: census(lab.seeds.iter().map(|(_, l)| l.category), accounts),
            labeled_after_propagation: prop.report.labeled_after,
            uncategorized_after_propagation: prop.report.uncategorized_after,
            after_propagation: census(prop.labels.iter().map(|(_, l)| l.category), accounts),
            model_labeled: preds.iter().filter(|a| a.source == FinalSource::Model).count(),
            final_labels: census(preds.iter().map(|a| a.category), accounts),
        };
        reconcile(
            Stage::Report,
            census.final_labels.values().sum::<usize>() == accounts,
            || "final census does not cover every account".into(),
        )?;
        let report = RunReport {
            dataset: ds.name.clone(),
            seed: self.config.seed,
            stages,
            census,
            feature_names: feat.correlation.names.clone(),
            selected_features: feat.selected(),
            descriptive: feat.descriptive,
            cv: ev.cv.report,
            holdout: HoldoutSummary {
                train_size: trained.holdout.train_size,
                test_size: trained.holdout.test_size,
                report: trained.holdout.report,
            },
            depth_sweep: ev.depth_sweep,
            truth: ev.truth,
            agreements,
            rechecks,
            comparison,
        };
        let mut sink = StageReport::new(Stage::Report);
        self.save_json(Stage::Report, &mut sink, artifacts::RUN_REPORT, &report)?;
        self.save_text(
            Stage::Report,
            &mut sink,
            artifacts::RUN_REPORT_MD,
            &report.to_markdown(),
        )?;
        let metadata = RunMetadata {
            version: env!("CARGO_PKG_VERSION").into(),
            started_at,
            finished_at: Utc::now(),
            threads: rayon::current_num_threads(),
            stage_millis: millis,
        };
        self.save_json(Stage::Report, &mut sink, artifacts::RUN_METADATA, &metadata)?;
        Ok(RunOutcome {
            report,
            metadata,
            model: trained.model,
        })
    }

    /// Runs one stage, reading upstream artifacts from the output directory
    /// where they exist and recomputing them otherwise.
    pub fn run_stage(&self, stage: Stage) -> Result<StageReport> {
        let _lock = self.lock()?;
        self.install(|p| p.run_stage_unlocked(stage))?
    }

    fn run_stage_unlocked(&self, stage: Stage) -> Result<StageReport> {
        let mut up = Upstream::new(self);
        Ok(match stage {
            Stage::Ingest => self.ingest()?.1,
            Stage::Label => {
                let ds = up.dataset()?;
                self.label(ds)?.1
            }
            Stage::Propagate => {
                let seeds = up.seeds()?;
                let ds = up.dataset()?;
                self.propagate(ds, &seeds)?.1
            }
            Stage::Featurize => {
                let labels = up.labels()?;
                let ds = up.dataset()?;
                self.featurize(ds, &labels)?.1
            }
            Stage::Train => {
                let rows = up.features()?;
                self.train(&rows)?.1
            }
            Stage::Predict => {
                let rows = up.features()?;
                let model = up.model()?;
                let labels = up.labels()?;
                self.predict(&labels, &rows, &model)?.1
            }
            Stage::Evaluate => {
                let rows = up.features()?;
                if self.config.evaluation.ground_truth.is_some() {
                    let preds = up.predictions()?;
                    let dataset = up.dataset()?;
                    let context = TruthContext {
                        final_labels: &preds,
                        dataset,
                    };
                    self.evaluate(&rows, Some(context))?.1
                } else {
                    self.evaluate(&rows, None)?.1
                }
            }
            Stage::Validate => {
                let preds = up.predictions()?;
                let model = up.model()?;
                self.validate_labels(&preds, &model)?.2
            }
            Stage::Compare => {
                let rows = up.features()?;
                self.compare(&rows)?.1
            }
            Stage::Report => return Err(PipelineError::Config("the report is produced by a full run".into())),
        })
    }
}

fn one_hot(c: Category) -> [f64; 4] {
    let mut d = [0.0; 4];
    if let Some(i) = c.index() {
        d[i] = 1.0;
    }
    d
}

/// Lazily resolved upstream inputs for a single-stage run.
struct Upstream<'p> {
    p: &'p Pipeline,
    dataset: Option<Dataset>,
}

impl<'p> Upstream<'p> {
    fn new(p: &'p Pipeline) -> Self {
        Upstream { p, dataset: None }
    }

    fn dataset(&mut self) -> Result<&Dataset> {
        if self.dataset.is_none() {
            let ds = if self.p.has(artifacts::CORPUS) {
                self.p.load_corpus()?
            } else {
                self.p.ingest()?.0.dataset
            };
            self.dataset = Some(ds);
        }
        Ok(self.dataset.as_ref().expect("dataset loaded"))
    }

    fn read_labels(&self, name: &str, stage: Stage) -> Result<SeedLabelSet> {
        SeedLabelSet::read_csv(open(&self.p.artifact(name)).map_err(data_err(stage))?).map_err(data_err(stage))
    }

    fn seeds(&mut self) -> Result<SeedLabelSet> {
        if self.p.has(artifacts::SEED_LABELS) {
            return self.read_labels(artifacts::SEED_LABELS, Stage::Label);
        }
        let p = self.p;
        Ok(p.label(self.dataset()?)?.0.seeds)
    }

    fn labels(&mut self) -> Result<SeedLabelSet> {
        if self.p.has(artifacts::LABELS) {
            return self.read_labels(artifacts::LABELS, Stage::Propagate);
        }
        let seeds = self.seeds()?;
        let p = self.p;
        Ok(p.propagate(self.dataset()?, &seeds)?.0.labels)
    }

    fn features(&mut self) -> Result<Vec<FeatureRow>> {
        if self.p.has(artifacts::FEATURES) {
            let s = Stage::Featurize;
            return read_feature_csv(open(&self.p.artifact(artifacts::FEATURES)).map_err(data_err(s))?)
                .map_err(data_err(s));
        }
        let labels = self.labels()?;
        let p = self.p;
        Ok(p.featurize(self.dataset()?, &labels)?.0.rows)
    }

    fn model(&mut self) -> Result<ForestModel> {
        if self.p.has(artifacts::MODEL) {
            return self.p.load_model();
        }
        let rows = self.features()?;
        Ok(self.p.train(&rows)?.0.model)
    }

    fn predictions(&mut self) -> Result<Vec<AccountPrediction>> {
        if self.p.has(artifacts::PREDICTIONS) {
            return self.p.load_predictions();
        }
        let rows = self.features()?;
        let model = self.model()?;
        let labels = self.labels()?;
        Ok(self.p.predict(&labels, &rows, &model)?.0)
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

impl RunReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Run report: {}\n\nSeed {}.\n", self.dataset, self.seed);

        let c = &self.census;
        let _ = writeln!(s, "## Label census\n");
        let _ = writeln!(s, "| Category | Seed | After propagation | Final |\n|---|---|---|---|");
        for (cat, n) in &c.seed {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} |",
                cat.display_name(),
                n,
                c.after_propagation.get(cat).unwrap_or(&0),
                c.final_labels.get(cat).unwrap_or(&0)
            );
        }
        let _ = writeln!(
            s,
            "\n{} accounts. Labeled: {} seeded, {} after propagation ({} uncategorized), {} more by the model.\n",
            c.accounts, c.seed_labeled, c.labeled_after_propagation, c.uncategorized_after_propagation, c.model_labeled
        );

        let _ = writeln!(
            s,
            "## Stages\n\n| Stage | Inputs | Outputs | Warnings |\n|---|---|---|---|"
        );
        let kv = |m: &BTreeMap<String, u64>| m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ");
        for st in &self.stages {
            let name = st.stage.map_or("-", Stage::name);
            let _ = writeln!(
                s,
                "| {name} | {} | {} | {} |",
                kv(&st.inputs),
                kv(&st.outputs),
                st.warnings.join("; ")
            );
        }

        if !self.descriptive.is_empty() {
            let _ = writeln!(s, "\n## Mean raw features by category\n");
            let _ = writeln!(s, "| Category | {} |", self.feature_names.join(" | "));
            let _ = writeln!(s, "|---|{}", "---|".repeat(self.feature_names.len()));
            for (cat, means) in &self.descriptive {
                let cells: Vec<String> = means.iter().map(|m| format!("{m:.2}")).collect();
                let _ = writeln!(s, "| {} | {} |", cat.display_name(), cells.join(" | "));
            }
        }
        let _ = writeln!(s, "\nSelected features: {}.\n", self.selected_features.join(", "));

        let _ = writeln!(s, "## Cross-validation\n\n{}", self.cv.to_markdown());
        let h = &self.holdout;
        let _ = writeln!(
            s,
            "## Holdout\n\nTrained on {} accounts, tested on {}: accuracy {}, macro F1 {:.2}.\n",
            h.train_size,
            h.test_size,
            pct(h.report.accuracy),
            h.report.macro_f1
        );
        if let Some(t) = &self.truth {
            let _ = writeln!(
                s,
                "## Ground truth\n\nCV predictions: accuracy {}, macro F1 {:.2}. Final labels: accuracy {}. Hashed accounts labeled from hashtags: {}/{} ({} correct).\n",
                pct(t.cv.accuracy),
                t.cv.macro_f1,
                pct(t.final_labels.accuracy),
                t.hashed_labeled,
                t.hashed_accounts,
                t.hashed_correct
            );
        }
        if !self.depth_sweep.is_empty() {
            let _ = writeln!(
                s,
                "## Depth sweep\n\n| Depth | Test accuracy | Train accuracy |\n|---|---|---|"
            );
            for d in &self.depth_sweep {
                let _ = writeln!(s, "| {} | {:.4} | {:.4} |", d.depth, d.accuracy, d.train_accuracy);
            }
            s.push('\n');
        }
        if !self.agreements.is_empty() {
            let _ = writeln!(s, "## Agreement with external labels\n\n| Reference | Matched | Intersection | Reference size | Agreement |\n|---|---|---|---|---|");
            for a in &self.agreements {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} |",
                    a.reference,
                    a.matched,
                    a.intersection,
                    a.reference_size,
                    pct(a.agreement)
                );
            }
            s.push('\n');
        }
        if !self.rechecks.is_empty() {
            let _ = writeln!(
                s,
                "## Manual rechecks\n\n| Dataset | Covered | Correct | Accuracy |\n|---|---|---|---|"
            );
            for r in &self.rechecks {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} |",
                    r.name,
                    r.report.covered,
                    r.report.correct,
                    pct(r.report.accuracy)
                );
            }
            s.push('\n');
        }
        if let Some(rows) = &self.comparison {
            let _ = writeln!(s, "## Classifier comparison\n\n{}", comparison_markdown(rows));
        }
        s
    }
}
