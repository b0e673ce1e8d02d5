//! Python bindings. Structured values cross the boundary as JSON strings in
//! the same shapes the command-line tool writes.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use schema_dst::config::RunConfig;
use schema_dst::data::{DialogueTurn, ServiceSchema, SlotDef};
use schema_dst::metrics::{value_match as match_value, MatchMode};
use schema_dst::model::{load_checkpoint, save_checkpoint, NluModel};
use schema_dst::normalize;
use schema_dst::pipeline;
use schema_dst::predict::{predict_turn, PredictOptions};
use schema_dst::synth::{generate, SynthConfig};
use schema_dst::tokenizer::{Tokenizer as _, Vocab, VocabBuilder, WordPiece};
use schema_dst::tracker;
use schema_dst::train::LrSchedule;
use schema_dst::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        Error::Input(_) => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(json_err)
}

/// WordPiece tokenizer with character offsets.
#[pyclass(name = "Tokenizer", module = "schema_dst")]
struct PyTokenizer {
    inner: WordPiece,
}

#[pymethods]
impl PyTokenizer {
    #[staticmethod]
    #[pyo3(signature = (path, lowercase = true))]
    fn load(path: PathBuf, lowercase: bool) -> PyResult<Self> {
        let vocab = Vocab::load(&path).map_err(to_py)?;
        Ok(Self {
            inner: WordPiece::new(vocab, lowercase),
        })
    }

    /// Builds a vocabulary from raw texts.
    #[staticmethod]
    #[pyo3(signature = (texts, min_word_count = 1, lowercase = true))]
    fn build(texts: Vec<String>, min_word_count: usize, lowercase: bool) -> Self {
        let mut b = VocabBuilder::new(min_word_count, lowercase);
        for t in &texts {
            b.add_text(t);
        }
        Self {
            inner: WordPiece::new(b.build(), lowercase),
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.vocab().save(&path).map_err(to_py)
    }

    /// `(id, start_char, end_char)` per token.
    fn tokenize(&self, text: &str) -> Vec<(u32, usize, usize)> {
        self.inner
            .tokenize(text)
            .into_iter()
            .map(|t| (t.id, t.start, t.end))
            .collect()
    }

    fn id_to_token(&self, id: u32) -> Option<String> {
        self.inner.id_to_token(id).map(str::to_string)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
}

/// A trained model and its tokenizer, loaded from a checkpoint directory.
#[pyclass(name = "Model", module = "schema_dst")]
struct PyModel {
    model: NluModel,
    tokenizer: WordPiece,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (model, tokenizer) = load_checkpoint(&path).map_err(to_py)?;
        Ok(Self { model, tokenizer })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.model, &self.tokenizer).map_err(to_py)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.model.num_parameters()
    }

    /// Scores every schema element for one turn. Takes a turn and a service
    /// schema as JSON and returns the turn predictions as JSON.
    #[pyo3(signature = (turn_json, schema_json, max_seq_len = 128))]
    fn predict_turn(
        &self,
        py: Python<'_>,
        turn_json: &str,
        schema_json: &str,
        max_seq_len: usize,
    ) -> PyResult<String> {
        let turn: DialogueTurn = serde_json::from_str(turn_json).map_err(json_err)?;
        let schema: ServiceSchema = serde_json::from_str(schema_json).map_err(json_err)?;
        schema.validate().map_err(to_py)?;
        let opts = PredictOptions {
            max_seq_len,
            ..Default::default()
        };
        let preds = py
            .detach(|| predict_turn(&turn, &schema, &self.model, &self.tokenizer, &opts))
            .map_err(to_py)?;
        to_json(&preds)
    }
}

/// Resolved run configuration driving the pipeline commands.
#[pyclass(name = "RunConfig", module = "schema_dst")]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    /// Parses a TOML document; missing fields take their defaults.
    #[new]
    #[pyo3(signature = (toml_text = None))]
    fn new(toml_text: Option<&str>) -> PyResult<Self> {
        let mut inner = match toml_text {
            Some(t) => RunConfig::from_toml(t).map_err(to_py)?,
            None => RunConfig::default(),
        };
        let seed = inner.seed;
        inner.set_seed(seed);
        inner.sync();
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let mut inner = RunConfig::load(&path).map_err(to_py)?;
        let seed = inner.seed;
        inner.set_seed(seed);
        inner.sync();
        Ok(Self { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }

    fn set_seed(&mut self, seed: u64) {
        self.inner.set_seed(seed);
    }

    #[getter]
    fn data_dir(&self) -> PathBuf {
        self.inner.data_dir.clone()
    }

    #[setter]
    fn set_data_dir(&mut self, dir: PathBuf) {
        self.inner.data_dir = dir;
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir.clone()
    }

    #[setter]
    fn set_output_dir(&mut self, dir: PathBuf) {
        self.inner.output_dir = dir;
    }

    /// Runs one pipeline command (`synth`, `preprocess`, `train`, `predict`,
    /// `track`, `evaluate`) and returns its result summary as JSON.
    #[pyo3(signature = (command, split = "dev", oracle = false))]
    fn run(&self, py: Python<'_>, command: &str, split: &str, oracle: bool) -> PyResult<String> {
        let cfg = &self.inner;
        cfg.validate().map_err(to_py)?;
        py.detach(|| -> PyResult<String> {
            match command {
                "synth" => to_json(&pipeline::cmd_synth(cfg).map_err(to_py)?),
                "preprocess" => to_json(&pipeline::cmd_preprocess(cfg, split).map_err(to_py)?),
                "train" => to_json(&pipeline::cmd_train(cfg).map_err(to_py)?.epochs),
                "predict" => to_json(
                    &pipeline::cmd_predict(cfg, split, oracle)
                        .map_err(to_py)?
                        .len(),
                ),
                "track" => to_json(&pipeline::cmd_track(cfg, split).map_err(to_py)?.len()),
                "evaluate" => to_json(&pipeline::cmd_evaluate(cfg, split).map_err(to_py)?),
                other => Err(PyValueError::new_err(format!("unknown command {other}"))),
            }
        })
    }
}

/// Generates a synthetic corpus under `output_dir` (`train/` and `dev/`) and
/// returns the number of train and dev dialogues.
#[pyfunction]
#[pyo3(signature = (output_dir, seed = 7))]
fn generate_corpus(output_dir: PathBuf, seed: u64) -> PyResult<(usize, usize)> {
    let config = SynthConfig {
        seed,
        ..Default::default()
    };
    let corpus = generate(&config).map_err(to_py)?;
    corpus.write(&output_dir).map_err(to_py)?;
    Ok((corpus.train.len(), corpus.dev.len()))
}

#[pyfunction]
#[pyo3(signature = (predicted, gold, categorical = false, fuzzy = false))]
fn value_match(predicted: &str, gold: Vec<String>, categorical: bool, fuzzy: bool) -> bool {
    let slot = categorical.then(|| SlotDef::categorical("slot", "", gold.clone()));
    let mode = if fuzzy {
        MatchMode::Fuzzy
    } else {
        MatchMode::Strict
    };
    match_value(predicted, &gold, slot.as_ref(), mode)
}

/// Best `(start, end, score)` inside `[lo, hi)`, or `(0, 0, score)` for no span.
#[pyfunction]
#[pyo3(signature = (start_logits, end_logits, lo, hi, max_answer_len = 30))]
fn decode_span(
    start_logits: Vec<f64>,
    end_logits: Vec<f64>,
    lo: usize,
    hi: usize,
    max_answer_len: usize,
) -> (usize, usize, f64) {
    let d = tracker::decode_span(&start_logits, &end_logits, (lo, hi), max_answer_len);
    (d.start, d.end, d.score)
}

#[pyfunction]
#[pyo3(signature = (step, max_lr, warmup_ratio, total_steps, power = 1.0))]
fn lr_at(step: usize, max_lr: f64, warmup_ratio: f64, total_steps: usize, power: f64) -> f64 {
    LrSchedule::new(max_lr, warmup_ratio, total_steps, power).lr_at(step)
}

#[pyfunction]
fn split_name(name: &str) -> String {
    normalize::split_name(name)
}

#[pymodule]
#[pyo3(name = "schema_dst")]
fn schema_dst_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTokenizer>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(value_match, m)?)?;
    m.add_function(wrap_pyfunction!(decode_span, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(split_name, m)?)?;
    Ok(())
}
