//! Python bindings: corpora, NMI pseudo-scoring, the transformer scorer,
//! both training stages, evaluation and the end-to-end experiment.
//!
//! Configuration arguments are plain dicts with the same keys as the TOML
//! files the command-line tool reads; omitted keys take their defaults.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anchorscore_core as core;
use anchorscore_core::corpus::{AugmentConfig, GenConfig, Matrix, ScoreScale};
use anchorscore_core::experiment::{ExperimentConfig, StageConfig};
use anchorscore_core::pipeline::LossKind;
use anchorscore_core::{Error, LossConfig, PhoneSeq, ScorerConfig};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn to_py_err(e: Error) -> PyErr {
    match e.root() {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Training(_) | Error::InfiniteLoss(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for core::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

fn config_from<T: DeserializeOwned + Default>(config: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let Some(obj) = config else {
        return Ok(T::default());
    };
    let json = obj.py().import("json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("invalid config: {e}")))
}

fn to_python<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn phones(tokens: Vec<String>) -> PyResult<PhoneSeq> {
    PhoneSeq::new(tokens).or_py()
}

fn scale_from(scale: (f64, f64)) -> PyResult<ScoreScale> {
    ScoreScale::new(scale.0, scale.1).or_py()
}

/// A sentence: reference phones, one feature row per phone and optional
/// per-aspect human scores.
#[pyclass(module = "anchorscore", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Sample {
    inner: core::Sample,
}

#[pymethods]
impl Sample {
    #[new]
    #[pyo3(signature = (id, reference, features, scores=None, scale=(1.0, 10.0), cohort="in-dist".to_string(), speaker=None))]
    fn new(
        id: String,
        reference: Vec<String>,
        features: Vec<Vec<f64>>,
        scores: Option<BTreeMap<String, f64>>,
        scale: (f64, f64),
        cohort: String,
        speaker: Option<String>,
    ) -> PyResult<Self> {
        let inner = core::Sample {
            id,
            speaker,
            cohort,
            reference: phones(reference)?,
            features: Matrix::from_rows(&features).or_py()?,
            scores,
            scale: scale_from(scale)?,
        };
        inner.validate().or_py()?;
        Ok(Sample { inner })
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn speaker(&self) -> Option<&str> {
        self.inner.speaker.as_deref()
    }

    #[getter]
    fn cohort(&self) -> &str {
        &self.inner.cohort
    }

    #[getter]
    fn reference(&self) -> Vec<String> {
        self.inner.reference.symbols().to_vec()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features.to_rows()
    }

    #[getter]
    fn scores(&self) -> Option<BTreeMap<String, f64>> {
        self.inner.scores.clone()
    }

    #[getter]
    fn scale(&self) -> (f64, f64) {
        (self.inner.scale.lo(), self.inner.scale.hi())
    }

    fn __len__(&self) -> usize {
        self.inner.reference.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Sample(id={:?}, cohort={:?}, phones={})",
            self.inner.id,
            self.inner.cohort,
            self.inner.reference.len()
        )
    }
}

/// A sample re-described against a pseudo reference, labelled with the NMI
/// between the true and pseudo references.
#[pyclass(module = "anchorscore", frozen, skip_from_py_object)]
#[derive(Clone)]
struct AugmentedSample {
    inner: core::AugmentedSample,
}

#[pymethods]
impl AugmentedSample {
    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn base_id(&self) -> &str {
        &self.inner.base_id
    }

    #[getter]
    fn reference(&self) -> Vec<String> {
        self.inner.reference.symbols().to_vec()
    }

    #[getter]
    fn pseudo_reference(&self) -> Vec<String> {
        self.inner.pseudo_reference.symbols().to_vec()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features_hyp.to_rows()
    }

    #[getter]
    fn pseudo_score(&self) -> f64 {
        self.inner.pseudo_score
    }

    fn __repr__(&self) -> String {
        format!(
            "AugmentedSample(id={:?}, pseudo_score={:.4})",
            self.inner.id, self.inner.pseudo_score
        )
    }
}

/// Transformer-encoder scorer with one output per aspect, in [-1, 1].
#[pyclass(module = "anchorscore", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Scorer {
    inner: core::ScorerModel,
}

#[pymethods]
impl Scorer {
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let cfg: ScorerConfig = config_from(config)?;
        Ok(Scorer {
            inner: core::ScorerModel::new(cfg).or_py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Scorer {
            inner: core::scorer::load_model(path).or_py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        core::scorer::save_model(&self.inner, path).or_py()
    }

    fn forward(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.forward(&Matrix::from_rows(&features).or_py()?).or_py()
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, self.inner.config())
    }

    #[getter]
    fn aspect_names(&self) -> Vec<String> {
        self.inner.aspect_names().to_vec()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scorer(aspects={:?}, params={})",
            self.inner.aspect_names(),
            self.inner.param_count()
        )
    }
}

fn unwrap_samples(samples: &[PyRef<'_, Sample>]) -> Vec<core::Sample> {
    samples.iter().map(|s| s.inner.clone()).collect()
}

fn wrap_samples(samples: Vec<core::Sample>) -> Vec<Sample> {
    samples.into_iter().map(|inner| Sample { inner }).collect()
}

/// Edit-distance alignment as (reference, hypothesis) token pairs; `*`
/// marks the missing side of an insertion or deletion.
#[pyfunction]
fn align(reference: Vec<String>, hypothesis: Vec<String>) -> PyResult<Vec<(String, String)>> {
    let a = core::align(&phones(reference)?, &phones(hypothesis)?).or_py()?;
    Ok(a.tokens().into_iter().map(|(r, h)| (r.to_string(), h.to_string())).collect())
}

/// Normalized mutual information between aligned phone sequences, in [0, 1].
#[pyfunction]
fn nmi(reference: Vec<String>, hypothesis: Vec<String>) -> PyResult<f64> {
    core::nmi(&phones(reference)?, &phones(hypothesis)?).or_py()
}

#[pyfunction]
#[pyo3(signature = (config=None))]
fn generate_corpus(config: Option<&Bound<'_, PyAny>>) -> PyResult<Vec<Sample>> {
    let cfg: GenConfig = config_from(config)?;
    Ok(wrap_samples(core::corpus::generate_corpus(&cfg).or_py()?))
}

#[pyfunction]
#[pyo3(signature = (samples, config=None))]
fn augment(samples: Vec<PyRef<'_, Sample>>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Vec<AugmentedSample>> {
    let cfg: AugmentConfig = config_from(config)?;
    let aug = core::corpus::augment(&unwrap_samples(&samples), &cfg).or_py()?;
    Ok(aug.into_iter().map(|inner| AugmentedSample { inner }).collect())
}

#[pyfunction]
fn load_corpus(path: PathBuf) -> PyResult<Vec<Sample>> {
    Ok(wrap_samples(core::corpus::load_corpus(path).or_py()?))
}

#[pyfunction]
fn save_corpus(samples: Vec<PyRef<'_, Sample>>, path: PathBuf) -> PyResult<()> {
    core::corpus::save_corpus(&unwrap_samples(&samples), path).or_py()
}

#[pyfunction]
fn load_augmented(path: PathBuf) -> PyResult<Vec<AugmentedSample>> {
    let aug = core::corpus::load_augmented(path).or_py()?;
    Ok(aug.into_iter().map(|inner| AugmentedSample { inner }).collect())
}

#[pyfunction]
fn save_augmented(samples: Vec<PyRef<'_, AugmentedSample>>, path: PathBuf) -> PyResult<()> {
    let aug: Vec<core::AugmentedSample> = samples.iter().map(|s| s.inner.clone()).collect();
    core::corpus::save_augmented(&aug, path).or_py()
}

type TrainOutput<'py> = (Scorer, Bound<'py, PyAny>, usize);

/// Stage I. Returns the anchor, the per-epoch history and the kept epoch.
#[pyfunction]
#[pyo3(signature = (augmented, config=None))]
fn train_anchor<'py>(
    py: Python<'py>,
    augmented: Vec<PyRef<'py, AugmentedSample>>,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<TrainOutput<'py>> {
    let stage: StageConfig = config_from(config)?;
    let aug: Vec<core::AugmentedSample> = augmented.iter().map(|s| s.inner.clone()).collect();
    let t = py
        .detach(|| core::pipeline::train_anchor(&aug, &stage.model, &stage.training))
        .or_py()?;
    Ok((Scorer { inner: t.model }, to_python(py, &t.history)?, t.best_epoch))
}

/// Stage II against a frozen anchor. `rho`, when given, selects the
/// interpolated MSE with that weight.
#[pyfunction]
#[pyo3(signature = (samples, anchor, config=None, rho=None))]
fn train_eval<'py>(
    py: Python<'py>,
    samples: Vec<PyRef<'py, Sample>>,
    anchor: &Scorer,
    config: Option<&Bound<'py, PyAny>>,
    rho: Option<f64>,
) -> PyResult<TrainOutput<'py>> {
    let mut stage: StageConfig = config_from(config)?;
    if let Some(rho) = rho {
        stage.training.loss = LossKind::Imse { rho };
    }
    let train = unwrap_samples(&samples);
    let anchor = anchor.inner.clone();
    let t = py
        .detach(|| core::pipeline::train_eval(&train, &anchor, &stage.model, &stage.training))
        .or_py()?;
    Ok((Scorer { inner: t.model }, to_python(py, &t.history)?, t.best_epoch))
}

/// Scores per sample as `{"id": ..., "scores": {aspect: score}}`, on `scale`
/// or each sample's own scale.
#[pyfunction]
#[pyo3(signature = (model, samples, scale=None))]
fn predict<'py>(
    py: Python<'py>,
    model: &Scorer,
    samples: Vec<PyRef<'py, Sample>>,
    scale: Option<(f64, f64)>,
) -> PyResult<Bound<'py, PyAny>> {
    let scale = scale.map(scale_from).transpose()?;
    let mut out = Vec::with_capacity(samples.len());
    for s in &samples {
        let scale = scale.unwrap_or(s.inner.scale);
        out.extend(core::pipeline::predict(&model.inner, std::slice::from_ref(&s.inner), scale).or_py()?);
    }
    to_python(py, &out)
}

/// Evaluation report (RMSE, PCC, band-wise RMSE per aspect) as a dict.
#[pyfunction]
#[pyo3(signature = (model, samples, name="model", bands=None))]
fn evaluate<'py>(
    py: Python<'py>,
    model: &Scorer,
    samples: Vec<PyRef<'py, Sample>>,
    name: &str,
    bands: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let report = core::pipeline::evaluate(&model.inner, name, &unwrap_samples(&samples), bands).or_py()?;
    to_python(py, &report)
}

#[pyfunction]
fn mse(pred: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    core::losses::mse(&pred, &target).or_py()
}

#[pyfunction]
fn kernel_weight(s: f64, s_hat: f64) -> f64 {
    core::losses::kernel_weight(s, s_hat)
}

/// Interpolated MSE value and its gradient with respect to `pred`.
#[pyfunction]
#[pyo3(signature = (pred, human, pseudo, rho=0.25))]
fn imse(pred: Vec<f64>, human: Vec<f64>, pseudo: Vec<f64>, rho: f64) -> PyResult<(f64, Vec<f64>)> {
    core::losses::imse(&pred, &human, &pseudo, &LossConfig::new(rho).or_py()?).or_py()
}

#[pyfunction]
fn rmse(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    core::evalreport::rmse(&pred, &truth).or_py()
}

#[pyfunction]
fn pcc(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    core::evalreport::pcc(&pred, &truth).or_py()
}

/// Runs the whole experiment into `out_dir` and returns the summary dict
/// (None when the compared rhos were not trained).
#[pyfunction]
#[pyo3(signature = (out_dir, preset="smoke", config=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    out_dir: PathBuf,
    preset: &str,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = match config {
        Some(_) => config_from::<ExperimentConfig>(config)?,
        None => ExperimentConfig::preset(preset).or_py()?,
    };
    let out = py
        .detach(|| core::experiment::run_experiment(&cfg, &out_dir, &|_| {}))
        .or_py()?;
    to_python(py, &out.summary)
}

#[pymodule]
fn anchorscore(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Sample>()?;
    m.add_class::<AugmentedSample>()?;
    m.add_class::<Scorer>()?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(augment, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(save_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(load_augmented, m)?)?;
    m.add_function(wrap_pyfunction!(save_augmented, m)?)?;
    m.add_function(wrap_pyfunction!(train_anchor, m)?)?;
    m.add_function(wrap_pyfunction!(train_eval, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_weight, m)?)?;
    m.add_function(wrap_pyfunction!(imse, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(pcc, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
