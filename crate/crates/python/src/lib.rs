//! Python bindings: loss functions, corpus generation, training and evaluation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use focal_lab::datagen::{self, CorpusBundle, GenSpec, SplitId};
use focal_lab::evaluator;
use focal_lab::losses::{self, LossKind, LossSpec, ProbVector};
use focal_lab::netmodel::ModelParams;
use focal_lab::optimizer;
use focal_lab::trainer::{self, BiasModelSource, ModelConfig, TrainSpec};

fn py_err(e: focal_lab::Error) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.code()))
}

fn to_probs(v: Vec<f64>) -> PyResult<ProbVector> {
    ProbVector::new(v).map_err(py_err)
}

fn loss_spec(loss: &str, gamma: f64) -> PyResult<LossSpec> {
    let kind = LossKind::from_short_name(loss)
        .ok_or_else(|| PyValueError::new_err(format!("unknown loss {loss:?}; expected ce, focal, dfl or poe")))?;
    let gamma = if kind == LossKind::CrossEntropy { 0.0 } else { gamma };
    let spec = LossSpec {
        kind,
        gamma,
        ..LossSpec::cross_entropy()
    };
    spec.validate().map_err(py_err)?;
    Ok(spec)
}

fn split_id(name: &str) -> PyResult<SplitId> {
    SplitId::ALL
        .into_iter()
        .find(|s| s.file_stem() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown split {name:?}")))
}

#[pyfunction]
fn softmax(logits: Vec<f64>) -> PyResult<Vec<f64>> {
    losses::softmax(&logits).map(ProbVector::into_inner).map_err(py_err)
}

/// Focal loss of one probability vector; `gamma = 0` is cross-entropy.
#[pyfunction]
#[pyo3(signature = (probs, label, gamma=0.0))]
fn focal_value(probs: Vec<f64>, label: usize, gamma: f64) -> PyResult<f64> {
    losses::focal_value(&to_probs(probs)?, label, &loss_spec("focal", gamma)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (logits, label, gamma=0.0))]
fn focal_grad_logits(logits: Vec<f64>, label: usize, gamma: f64) -> PyResult<Vec<f64>> {
    losses::focal_grad_logits(&logits, label, &loss_spec("focal", gamma)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (probs, label, bias_probs, gamma=2.0))]
fn debiased_focal_value(probs: Vec<f64>, label: usize, bias_probs: Vec<f64>, gamma: f64) -> PyResult<f64> {
    losses::debiased_focal_value(
        &to_probs(probs)?,
        label,
        &to_probs(bias_probs)?,
        &loss_spec("dfl", gamma)?,
    )
    .map_err(py_err)
}

#[pyfunction]
fn product_of_experts(main_probs: Vec<f64>, bias_probs: Vec<f64>) -> PyResult<Vec<f64>> {
    losses::product_of_experts(&to_probs(main_probs)?, &to_probs(bias_probs)?)
        .map(ProbVector::into_inner)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (step, total_steps, peak_lr=2e-5, warmup_fraction=0.1))]
fn warmup_linear_lr(step: usize, total_steps: usize, peak_lr: f64, warmup_fraction: f64) -> PyResult<f64> {
    optimizer::warmup_linear_lr(step, total_steps, peak_lr, warmup_fraction).map_err(py_err)
}

/// A generated corpus with all six splits.
#[pyclass(module = "focallab", frozen)]
struct Corpus {
    inner: CorpusBundle,
}

#[pymethods]
impl Corpus {
    /// Generate from generator settings; unspecified sizes keep their defaults.
    #[new]
    #[pyo3(signature = (seed=0, n_train=None, n_val=None, n_test=None, n_challenge_per_cell=None, n_pool_per_cell=None))]
    fn new(
        seed: u64,
        n_train: Option<usize>,
        n_val: Option<usize>,
        n_test: Option<usize>,
        n_challenge_per_cell: Option<usize>,
        n_pool_per_cell: Option<usize>,
    ) -> PyResult<Self> {
        let d = GenSpec::default();
        let spec = GenSpec {
            seed,
            n_train: n_train.unwrap_or(d.n_train),
            n_val: n_val.unwrap_or(d.n_val),
            n_test: n_test.unwrap_or(d.n_test),
            n_challenge_per_cell: n_challenge_per_cell.unwrap_or(d.n_challenge_per_cell),
            n_pool_per_cell: n_pool_per_cell.unwrap_or(d.n_pool_per_cell),
            ..d
        };
        let inner = datagen::generate_corpus(&spec).map_err(py_err)?;
        Ok(Corpus { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Corpus {
            inner: CorpusBundle::load_dir(&dir).map_err(py_err)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save_dir(&dir).map_err(py_err)
    }

    /// Example counts keyed by split name.
    fn sizes(&self) -> BTreeMap<&'static str, usize> {
        SplitId::ALL
            .into_iter()
            .map(|s| (s.file_stem(), self.inner.split(s).len()))
            .collect()
    }

    fn labels(&self, split: &str) -> PyResult<Vec<usize>> {
        Ok(self.inner.split(split_id(split)?).iter().map(|e| e.label).collect())
    }

    /// Copy with `n` pool examples appended to the training split.
    fn inject(&self, n: usize, seed: u64) -> PyResult<Corpus> {
        Ok(Corpus {
            inner: datagen::inject_challenge_samples(&self.inner, n, seed).map_err(py_err)?,
        })
    }

    /// Copy with hardness tags from a shortcut-only model.
    fn with_hardness(&self, seed: u64) -> PyResult<Corpus> {
        Ok(Corpus {
            inner: datagen::label_hardness(&self.inner, seed).map_err(py_err)?,
        })
    }
}

/// Trained network parameters.
#[pyclass(module = "focallab", frozen)]
struct Model {
    params: ModelParams,
}

#[pymethods]
impl Model {
    /// Train on `corpus` and return the model with its per-epoch history.
    /// DFL and PoE first fit their own shortcut-only bias model.
    #[staticmethod]
    #[pyo3(signature = (corpus, loss="focal", gamma=0.0, seed=0, max_epochs=6, hidden_dim=64, early_stopping=true))]
    fn train(
        corpus: &Corpus,
        loss: &str,
        gamma: f64,
        seed: u64,
        max_epochs: usize,
        hidden_dim: usize,
        early_stopping: bool,
    ) -> PyResult<(Model, Vec<BTreeMap<&'static str, f64>>)> {
        let loss = loss_spec(loss, gamma)?;
        let spec = TrainSpec {
            loss,
            seed,
            max_epochs,
            early_stopping,
            bias_model_source: if loss.kind.needs_bias_model() {
                BiasModelSource::TrainShortcutOnlyFirst
            } else {
                BiasModelSource::None
            },
            ..TrainSpec::default()
        };
        let (params, history) =
            trainer::train_run(&corpus.inner, &ModelConfig { hidden_dim }, &spec).map_err(py_err)?;
        let rows = history
            .epochs
            .iter()
            .map(|r| {
                BTreeMap::from([
                    ("epoch", r.epoch as f64),
                    ("train_loss", r.train_loss),
                    ("val_loss", r.val_loss),
                    ("val_acc", r.val_acc),
                    ("lr", r.lr),
                ])
            })
            .collect();
        Ok((Model { params }, rows))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            params: ModelParams::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.params.save(&path).map_err(py_err)
    }

    fn num_params(&self) -> usize {
        self.params.num_params()
    }

    /// Class probabilities for every example of one split.
    fn predict_proba(&self, corpus: &Corpus, split: &str) -> PyResult<Vec<Vec<f64>>> {
        corpus
            .inner
            .split(split_id(split)?)
            .iter()
            .map(|e| self.params.probs_for(e).map_err(py_err))
            .collect()
    }

    /// Scalar metrics by name; `hard_accuracy` is None without hardness tags.
    #[pyo3(signature = (corpus, loss="focal", gamma=0.0))]
    fn evaluate(&self, corpus: &Corpus, loss: &str, gamma: f64) -> PyResult<BTreeMap<String, Option<f64>>> {
        let report = evaluator::evaluate(
            &self.params,
            &corpus.inner,
            &loss_spec(loss, gamma)?,
            evaluator::DEFAULT_BINS,
        )
        .map_err(py_err)?;
        Ok(report.metrics().into_iter().collect())
    }
}

#[pymodule]
pub fn focallab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(focal_value, m)?)?;
    m.add_function(wrap_pyfunction!(focal_grad_logits, m)?)?;
    m.add_function(wrap_pyfunction!(debiased_focal_value, m)?)?;
    m.add_function(wrap_pyfunction!(product_of_experts, m)?)?;
    m.add_function(wrap_pyfunction!(warmup_linear_lr, m)?)?;
    m.add_class::<Corpus>()?;
    m.add_class::<Model>()?;
    Ok(())
}
