//! Python bindings: corpora, the toy translation model, the selection agent,
//! BLEU and the file-backed experiment pipeline.

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use reselect::agent::{Agent as CoreAgent, AgentConfig};
use reselect::corpus::{self, SyntheticConfig, SyntheticGenerator};
use reselect::curriculum::{pretrain, PretrainConfig};
use reselect::eval::{corpus_bleu, evaluate_metrics};
use reselect::experiment::{self, Baseline, ExperimentConfig as CoreConfig};
use reselect::features::FeatureContext;
use reselect::learner::{perplexity, Learner, ToyModel as CoreModel, ToyModelConfig};
use reselect::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::MissingArtifact { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "Corpus", module = "reselect_py", skip_from_py_object)]
#[derive(Clone)]
pub struct Corpus {
    inner: corpus::Corpus,
}

#[pymethods]
impl Corpus {
    /// Noisy synthetic parallel corpus.
    #[staticmethod]
    #[pyo3(signature = (size=5000, noise_rate=0.3, vocab_size=60, seed=1))]
    fn synthetic(size: usize, noise_rate: f64, vocab_size: usize, seed: u64) -> PyResult<Self> {
        let config = SyntheticConfig {
            size,
            noise_rate,
            vocab_size,
            seed,
            ..SyntheticConfig::default()
        };
        let inner = corpus::generate_synthetic_corpus(&config).map_err(to_py)?;
        Ok(Corpus { inner })
    }

    /// Clean split of `n` pairs from the same generator, sharing this corpus's vocabularies.
    #[pyo3(signature = (n, stream, size=5000, noise_rate=0.3, vocab_size=60, seed=1))]
    fn clean_split(
        &self,
        n: usize,
        stream: u64,
        size: usize,
        noise_rate: f64,
        vocab_size: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let config = SyntheticConfig {
            size,
            noise_rate,
            vocab_size,
            seed,
            ..SyntheticConfig::default()
        };
        let generator = SyntheticGenerator::new(config).map_err(to_py)?;
        Ok(Corpus {
            inner: generator.clean_split(n, stream, &self.inner),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Corpus {
            inner: corpus::load_corpus(path).map_err(to_py)?,
        })
    }

    /// Loads a split with this corpus's vocabularies.
    fn load_split(&self, path: &str) -> PyResult<Self> {
        Ok(Corpus {
            inner: corpus::load_corpus_with_vocab(path, &self.inner).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        corpus::save_corpus(&self.inner, path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn corruption_rate(&self) -> f64 {
        self.inner.corruption_rate()
    }

    fn source_vocab_size(&self) -> usize {
        self.inner.source_vocab.len()
    }

    fn target_vocab_size(&self) -> usize {
        self.inner.target_vocab.len()
    }

    /// `(id, source, target, corrupted)` tuples.
    fn examples(&self) -> Vec<(u64, String, String, bool)> {
        self.inner
            .examples
            .iter()
            .map(|e| {
                (
                    e.id,
                    self.inner.source_vocab.render(&e.source),
                    self.inner.target_vocab.render(&e.target),
                    e.is_corrupted(),
                )
            })
            .collect()
    }

    /// Target token ids of every example.
    fn target_ids(&self) -> Vec<Vec<u32>> {
        self.inner.examples.iter().map(|e| e.target.ids().to_vec()).collect()
    }

    /// Static 99-wide feature rows (the model-dependent column is zero).
    fn static_features(&self) -> PyResult<Vec<Vec<f64>>> {
        let ctx = FeatureContext::with_rule_taggers(&self.inner).map_err(to_py)?;
        let rows = ctx.static_features_all(&self.inner.examples).map_err(to_py)?;
        Ok(rows.into_iter().map(|r| r.as_slice().to_vec()).collect())
    }

    fn to_tsv(&self) -> String {
        self.inner.to_tsv()
    }
}

#[pyclass(name = "ToyModel", module = "reselect_py", skip_from_py_object)]
#[derive(Clone)]
pub struct ToyModel {
    inner: CoreModel,
}

#[pymethods]
impl ToyModel {
    #[new]
    #[pyo3(signature = (corpus, embed_dim=16, hidden=64, seed=7))]
    fn new(corpus: &Corpus, embed_dim: usize, hidden: usize, seed: u64) -> Self {
        let config = ToyModelConfig {
            embed_dim,
            hidden,
            seed,
            ..ToyModelConfig::default()
        };
        ToyModel {
            inner: CoreModel::new(corpus.inner.source_vocab.len(), corpus.inner.target_vocab.len(), config),
        }
    }

    /// Trains with the decaying schedule; returns validation perplexity per epoch.
    #[pyo3(signature = (train, validation, epochs=30, lr=0.02, seed=3))]
    fn pretrain(&mut self, train: &Corpus, validation: &Corpus, epochs: usize, lr: f64, seed: u64) -> PyResult<Vec<f64>> {
        let config = PretrainConfig {
            epochs,
            lr,
            seed,
            ..PretrainConfig::default()
        };
        let report = pretrain(&mut self.inner, &train.inner.examples, &validation.inner.examples, &config)
            .map_err(to_py)?;
        Ok(report.val_perplexity)
    }

    fn perplexity(&self, data: &Corpus) -> PyResult<f64> {
        perplexity(&self.inner, &data.inner.examples).map_err(to_py)
    }

    fn log_likelihoods(&self, data: &Corpus) -> Vec<f64> {
        self.inner.log_likelihoods(&data.inner.examples)
    }

    /// Greedy translations as token ids.
    fn translate(&self, data: &Corpus) -> Vec<Vec<u32>> {
        reselect::eval::translate(&self.inner, &data.inner.examples)
    }

    /// Metrics JSON: `{bleu, p1..p4, bp, perplexity}`.
    fn evaluate(&self, test: &Corpus) -> PyResult<String> {
        Ok(evaluate_metrics(&self.inner, &test.inner.examples).map_err(to_py)?.to_json())
    }

    fn checksum(&self) -> u64 {
        self.inner.checksum()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(ToyModel {
            inner: CoreModel::from_json(text).map_err(to_py)?,
        })
    }
}

#[pyclass(name = "Agent", module = "reselect_py")]
pub struct Agent {
    inner: CoreAgent,
}

#[pymethods]
impl Agent {
    #[new]
    #[pyo3(signature = (batch_size=16, seed=11))]
    fn new(batch_size: usize, seed: u64) -> PyResult<Self> {
        let config = AgentConfig {
            batch_size,
            seed,
            ..AgentConfig::default()
        };
        Ok(Agent {
            inner: CoreAgent::new(config).map_err(to_py)?,
        })
    }

    /// Selection distribution of the online policy over a batch of raw feature rows.
    fn act(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let rows = features.len();
        let cols = features.first().map_or(0, Vec::len);
        if features.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err("feature rows differ in length"));
        }
        let raw = Array2::from_shape_vec((rows, cols), features.concat())
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(self.inner.online.act_raw(raw.view()).map_err(to_py)?.0)
    }

    fn checksum(&self) -> u64 {
        self.inner.online.checksum()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Agent {
            inner: CoreAgent::from_json(text).map_err(to_py)?,
        })
    }
}

#[pyclass(name = "ExperimentConfig", module = "reselect_py", skip_from_py_object)]
#[derive(Clone)]
pub struct ExperimentConfig {
    inner: CoreConfig,
}

#[pymethods]
impl ExperimentConfig {
    #[new]
    #[pyo3(signature = (output_dir=None))]
    fn new(output_dir: Option<String>) -> Self {
        let mut inner = CoreConfig::default();
        if let Some(dir) = output_dir {
            inner.output_dir = dir.into();
        }
        ExperimentConfig { inner }
    }

    #[staticmethod]
    fn full_scale() -> Self {
        ExperimentConfig {
            inner: CoreConfig::full_scale(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(ExperimentConfig {
            inner: CoreConfig::from_toml(text).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn output_dir(&self) -> String {
        self.inner.output_dir.display().to_string()
    }

    #[setter]
    fn set_output_dir(&mut self, dir: String) {
        self.inner.output_dir = dir.into();
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("summary serializes")
}

/// Corpus BLEU over token-id sequences as `(bleu, [p1..p4], bp)`.
#[pyfunction]
#[pyo3(signature = (hypotheses, references, smoothing=false))]
fn bleu(hypotheses: Vec<Vec<u32>>, references: Vec<Vec<u32>>, smoothing: bool) -> PyResult<(f64, Vec<f64>, f64)> {
    let r = corpus_bleu(&hypotheses, &references, smoothing).map_err(to_py)?;
    Ok((r.bleu, r.precisions.to_vec(), r.brevity_penalty))
}

#[pyfunction]
fn generate(config: &ExperimentConfig) -> PyResult<String> {
    experiment::generate(&config.inner).map(|s| to_json(&s)).map_err(to_py)
}

#[pyfunction(name = "pretrain")]
fn run_pretrain(config: &ExperimentConfig) -> PyResult<String> {
    experiment::run_pretrain(&config.inner).map(|s| to_json(&s)).map_err(to_py)
}

#[pyfunction]
fn run_rl(config: &ExperimentConfig) -> PyResult<String> {
    experiment::run_rl(&config.inner).map(|s| to_json(&s)).map_err(to_py)
}

#[pyfunction]
fn run_baseline(config: &ExperimentConfig, method: &str) -> PyResult<String> {
    let method: Baseline = method.parse().map_err(to_py)?;
    experiment::run_baseline(&config.inner, method).map(|s| to_json(&s)).map_err(to_py)
}

#[pyfunction]
fn report(config: &ExperimentConfig) -> PyResult<String> {
    experiment::report(&config.inner).map(|r| r.to_json()).map_err(to_py)
}

#[pymodule]
fn reselect_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<ToyModel>()?;
    m.add_class::<Agent>()?;
    m.add_class::<ExperimentConfig>()?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(run_rl, m)?)?;
    m.add_function(wrap_pyfunction!(run_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
