//! Python bindings for the footprint pipeline.
//!
//! Reports cross the boundary as plain dicts and lists; categories as
//! their tokens (`"FakeNews"`, `"Organizations"`, ...).

use std::collections::HashMap;
use std::error::Error;
use std::fmt::Display;
use std::fs;
use std::path::PathBuf;

use footprint::classifiers::{self, Classifier, ForestModel, Sample, TrainConfig, TrainingSet};
use footprint::evaluation::{self, ConfusionMatrix, MetricsReport};
use footprint::pipeline::{self, PipelineConfig, PipelineError, Stage};
use footprint::propagation::{self, SparseHashtagVector};
use footprint::synthgen::{self, GeneratorConfig, SynthError};
use footprint::Category;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(footprint_py, FootprintError, PyException);

fn failure(e: impl Display) -> PyErr {
    FootprintError::new_err(e.to_string())
}

fn invalid(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// The error and its sources, joined like `anyhow`'s alternate format.
fn chain(e: &dyn Error) -> String {
    let mut msg = e.to_string();
    let mut next = e.source();
    while let Some(s) = next {
        msg = format!("{msg}: {s}");
        next = s.source();
    }
    msg
}

fn pipeline_err(e: PipelineError) -> PyErr {
    match e {
        PipelineError::Config(_) => invalid(e),
        _ => failure(chain(&e)),
    }
}

fn synth_err(e: SynthError) -> PyErr {
    match e {
        SynthError::InvalidConfig(_) | SynthError::Toml(_) => invalid(e),
        _ => failure(e),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(failure)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_category(token: &str) -> PyResult<Category> {
    token.parse().map_err(invalid)
}

fn training_set(
    features: Vec<Vec<f64>>,
    labels: Vec<String>,
    feature_names: Option<Vec<String>>,
) -> PyResult<TrainingSet> {
    if features.len() != labels.len() {
        return Err(invalid(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let d = features.first().map_or(0, Vec::len);
    let names = feature_names.unwrap_or_else(|| (0..d).map(|i| format!("f{i}")).collect());
    let samples = features
        .into_iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (values, label))| {
            if values.len() != names.len() {
                return Err(invalid(format!(
                    "row {i} has {} values, expected {}",
                    values.len(),
                    names.len()
                )));
            }
            Ok(Sample::new(format!("row{i}"), values, parse_category(label)?))
        })
        .collect::<PyResult<_>>()?;
    Ok(TrainingSet::new(names, samples))
}

/// Pipeline over a TOML configuration file.
///
/// Relative paths in the file resolve against its directory.
#[pyclass(module = "footprint_py")]
struct Pipeline {
    inner: pipeline::Pipeline,
}

#[pymethods]
impl Pipeline {
    #[new]
    #[pyo3(signature = (config, *, seed=None, output_dir=None, threads=None))]
    fn new(config: PathBuf, seed: Option<u64>, output_dir: Option<PathBuf>, threads: Option<usize>) -> PyResult<Self> {
        let mut cfg = PipelineConfig::load(&config).map_err(pipeline_err)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(o) = output_dir {
            cfg.output_dir = o;
        }
        if let Some(t) = threads {
            cfg.threads = t;
        }
        let inner = pipeline::Pipeline::new(cfg).map_err(pipeline_err)?;
        Ok(Pipeline { inner })
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir().to_path_buf()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.config().seed
    }

    /// Path of a named artifact inside the output directory.
    fn artifact(&self, name: &str) -> PathBuf {
        self.inner.artifact(name)
    }

    fn config_toml(&self) -> String {
        self.inner.config().to_toml()
    }

    /// Runs every stage and returns the run report.
    fn run<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let outcome = py.detach(|| self.inner.run()).map_err(pipeline_err)?;
        to_py(py, &outcome.report)
    }

    /// Runs one stage, loading upstream artifacts or recomputing them.
    fn run_stage<'py>(&self, py: Python<'py>, stage: &str) -> PyResult<Bound<'py, PyAny>> {
        let stage: Stage = serde_json::from_value(serde_json::Value::String(stage.to_lowercase()))
            .map_err(|_| invalid(format!("unknown stage {stage}")))?;
        let report = py.detach(|| self.inner.run_stage(stage)).map_err(pipeline_err)?;
        to_py(py, &report)
    }

    /// The model trained by the last run or `train` stage.
    fn load_model(&self) -> PyResult<Forest> {
        let model = self.inner.load_model().map_err(pipeline_err)?;
        Ok(Forest { model })
    }

    fn __repr__(&self) -> String {
        format!("Pipeline(output_dir={:?})", self.inner.output_dir())
    }
}

/// Random forest over four social-footprint categories.
#[pyclass(module = "footprint_py")]
struct Forest {
    model: ForestModel,
}

#[pymethods]
impl Forest {
    #[staticmethod]
    #[pyo3(signature = (features, labels, *, feature_names=None, n_trees=100, max_depth=None, features_per_split=None, seed=0, threads=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        features: Vec<Vec<f64>>,
        labels: Vec<String>,
        feature_names: Option<Vec<String>>,
        n_trees: usize,
        max_depth: Option<usize>,
        features_per_split: Option<usize>,
        seed: u64,
        threads: usize,
    ) -> PyResult<Self> {
        let set = training_set(features, labels, feature_names)?;
        let config = TrainConfig {
            n_trees,
            max_depth,
            features_per_split,
            seed,
            ..TrainConfig::default()
        };
        let model = py
            .detach(|| classifiers::train_forest_with_threads(&set, &config, threads))
            .map_err(failure)?;
        Ok(Forest { model })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ForestModel::from_json(text)
            .map(|model| Forest { model })
            .map_err(invalid)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = fs::read_to_string(&path).map_err(failure)?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> PyResult<String> {
        self.model.to_json().map_err(failure)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        fs::write(path, self.to_json()?).map_err(failure)
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.model.feature_names.clone()
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.model.trees.len()
    }

    #[getter]
    fn mean_oob_accuracy(&self) -> Option<f64> {
        self.model.summary.mean_oob_accuracy
    }

    /// Majority-vote category per row.
    fn predict(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<String>> {
        features
            .iter()
            .map(|row| {
                let p = self.model.predict_values("", row).map_err(invalid)?;
                Ok(p.category.token().to_string())
            })
            .collect()
    }

    /// Vote shares per row, in category order.
    fn predict_proba(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        features
            .iter()
            .map(|row| {
                Ok(self
                    .model
                    .predict_values("", row)
                    .map_err(invalid)?
                    .distribution
                    .to_vec())
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Forest(n_trees={}, features={})",
            self.model.trees.len(),
            self.model.feature_names.len()
        )
    }
}

/// Trainable categories in tie-break order.
#[pyfunction]
fn categories() -> Vec<&'static str> {
    Category::ALL.iter().map(|c| c.token()).collect()
}

/// Writes a synthetic archive plus `pipeline.toml` into `out_dir`.
///
/// Returns the paths written, keyed by role.
#[pyfunction]
#[pyo3(signature = (out_dir, *, seed=0, accounts_per_category=None, noise=None, hashed_fraction=None, config=None))]
fn generate_synthetic(
    py: Python<'_>,
    out_dir: PathBuf,
    seed: u64,
    accounts_per_category: Option<usize>,
    noise: Option<f64>,
    hashed_fraction: Option<f64>,
    config: Option<PathBuf>,
) -> PyResult<HashMap<&'static str, PathBuf>> {
    let mut cfg = match config {
        Some(p) => GeneratorConfig::load(&p).map_err(synth_err)?,
        None => GeneratorConfig::default(),
    };
    cfg.seed = seed;
    if let Some(n) = accounts_per_category {
        cfg.accounts_per_category = [n; Category::COUNT];
    }
    if let Some(x) = noise {
        cfg.noise = x;
    }
    if let Some(h) = hashed_fraction {
        cfg.hashed_fraction = [h; Category::COUNT];
    }
    cfg.validate().map_err(synth_err)?;
    let files = py
        .detach(|| -> Result<_, SynthError> {
            let corpus = synthgen::generate(&cfg)?;
            corpus.write_to_dir(&out_dir)
        })
        .map_err(synth_err)?;
    let generator = out_dir.join("generator.toml");
    let pipeline = out_dir.join("pipeline.toml");
    fs::write(&generator, cfg.to_toml()).map_err(failure)?;
    fs::write(&pipeline, PipelineConfig::for_synthetic(cfg.seed).to_toml()).map_err(failure)?;
    Ok(HashMap::from([
        ("archive", files.archive),
        ("labels", files.labels),
        ("truth", files.truth),
        ("generator", generator),
        ("pipeline", pipeline),
    ]))
}

/// Cosine similarity of two sparse hashtag count vectors.
#[pyfunction]
fn cosine_similarity(a: HashMap<u32, u64>, b: HashMap<u32, u64>) -> PyResult<f64> {
    let u = SparseHashtagVector::new("a", 0, a.into_iter().collect());
    let v = SparseHashtagVector::new("b", 0, b.into_iter().collect());
    propagation::cosine_similarity(&u, &v).map_err(invalid)
}

#[pyfunction]
fn gini_impurity(counts: Vec<f64>) -> PyResult<f64> {
    classifiers::gini_impurity(&counts).map_err(invalid)
}

/// Accuracy, per-category precision/recall/F1 and the confusion matrix.
#[pyfunction]
fn classification_report<'py>(
    py: Python<'py>,
    truth: Vec<String>,
    predicted: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    if truth.len() != predicted.len() {
        return Err(invalid(format!(
            "{} truths but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let pairs = truth
        .iter()
        .zip(&predicted)
        .map(|(t, p)| Ok((parse_category(t)?, parse_category(p)?)))
        .collect::<PyResult<Vec<_>>>()?;
    to_py(py, &MetricsReport::from_confusion(ConfusionMatrix::from_pairs(pairs)))
}

/// Stratified fold index per account.
#[pyfunction]
#[pyo3(signature = (labels, k=5, seed=0))]
fn stratified_folds(labels: HashMap<String, String>, k: usize, seed: u64) -> PyResult<HashMap<String, usize>> {
    let parsed = labels
        .iter()
        .map(|(a, c)| Ok((a.as_str(), parse_category(c)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let folds = evaluation::stratified_folds(parsed, k, seed).map_err(invalid)?;
    Ok(labels
        .keys()
        .filter_map(|a| folds.fold_of(a).map(|f| (a.clone(), f)))
        .collect())
}

/// Stratified k-fold cross-validation of the forest.
#[pyfunction]
#[pyo3(signature = (features, labels, *, k=5, n_trees=100, max_depth=None, seed=0))]
fn cross_validate_forest<'py>(
    py: Python<'py>,
    features: Vec<Vec<f64>>,
    labels: Vec<String>,
    k: usize,
    n_trees: usize,
    max_depth: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let set = training_set(features, labels, None)?;
    let config = TrainConfig {
        n_trees,
        max_depth,
        seed,
        ..TrainConfig::default()
    };
    let trainer = evaluation::forest_trainer(config);
    let cv = py
        .detach(|| evaluation::cross_validate(&set, &trainer, k, seed))
        .map_err(failure)?;
    to_py(py, &cv.report)
}

#[pymodule]
pub fn footprint_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FootprintError", m.py().get_type::<FootprintError>())?;
    m.add_class::<Pipeline>()?;
    m.add_class::<Forest>()?;
    m.add_function(wrap_pyfunction!(categories, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(gini_impurity, m)?)?;
    m.add_function(wrap_pyfunction!(classification_report, m)?)?;
    m.add_function(wrap_pyfunction!(stratified_folds, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate_forest, m)?)?;
    Ok(())
}
