//! Python bindings: vocabulary, training, greedy decoding, baselines and
//! metrics of `genex_core`.

use std::path::PathBuf;

use genex_core::baselines::{self, TermScore, TfIdfIndex};
use genex_core::config::KeyValues;
use genex_core::datagen::{self, ExplanationTriple, Source, SynthConfig};
use genex_core::decoding::{self, DecodeOptions};
use genex_core::metrics;
use genex_core::model::{encode_samples, ModelConfig, Variant};
use genex_core::selftest;
use genex_core::tokenizer;
use genex_core::training::{self, TrainConfig, TrainState};
use genex_core::GenexError;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: GenexError) -> PyErr {
    match e {
        GenexError::Io { .. } => PyOSError::new_err(e.to_string()),
        e if e.is_numeric() => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

type Triple = (String, String, String);

fn triples(rows: Vec<Triple>) -> Vec<ExplanationTriple> {
    rows.into_iter()
        .map(|(query, document, explanation)| ExplanationTriple {
            query,
            document,
            explanation,
            source: Source::Synthetic,
        })
        .collect()
}

/// Subword vocabulary.
#[pyclass(name = "Vocab", module = "genex")]
struct PyVocab {
    inner: tokenizer::Vocab,
}

#[pymethods]
impl PyVocab {
    #[staticmethod]
    fn train(texts: Vec<String>, size: usize) -> PyResult<Self> {
        let inner = tokenizer::Vocab::train(texts.iter().map(String::as_str), size).map_err(to_py)?;
        Ok(PyVocab { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyVocab {
            inner: tokenizer::Vocab::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        self.inner.tokenize(text)
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        self.inner.encode_text(text)
    }

    fn decode(&self, ids: Vec<u32>) -> PyResult<String> {
        self.inner.decode(&ids).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Model hyperparameters; keyword arguments override the desk defaults.
#[pyclass(name = "ModelConfig", module = "genex", from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (variant = "genex", **overrides))]
    fn new(variant: &str, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let v: Variant = variant.parse().map_err(to_py)?;
        let mut kv = KeyValues::new();
        if let Some(d) = overrides {
            for (k, val) in d.iter() {
                kv.set(&k.extract::<String>()?, val.str()?.to_str()?);
            }
        }
        kv.reject_unknown(ModelConfig::keys()).map_err(to_py)?;
        let inner = ModelConfig::desk(v).apply(&kv).map_err(to_py)?;
        inner.validate().map_err(to_py)?;
        Ok(PyModelConfig { inner })
    }

    /// The gradient-check configuration (d = 8, one-layer stacks).
    #[staticmethod]
    fn tiny(variant: &str, vocab_size: usize) -> PyResult<Self> {
        Ok(PyModelConfig {
            inner: ModelConfig::tiny(variant.parse().map_err(to_py)?, vocab_size),
        })
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size
    }

    fn to_dict(&self) -> Vec<(String, String)> {
        let kv = self.inner.to_kv();
        kv.keys()
            .map(|k| (k.to_string(), kv.get_str(k).unwrap_or_default().to_string()))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("ModelConfig({})", self.inner.to_kv().to_text().trim().replace('\n', ", "))
    }
}

/// A training run: parameters, optimizer state and counters.
#[pyclass(name = "Trainer", module = "genex")]
struct PyTrainer {
    state: TrainState,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (config, vocab, lr = 3e-4, batch_tokens = 512, seed = 1))]
    fn new(config: PyModelConfig, vocab: &PyVocab, lr: f64, batch_tokens: usize, seed: u64) -> PyResult<Self> {
        let mut model = config.inner;
        model.vocab_size = vocab.inner.len();
        let mut train = TrainConfig {
            batch_tokens,
            ..TrainConfig::default()
        };
        train.adam.lr = lr;
        Ok(PyTrainer {
            state: TrainState::new(model, train, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyTrainer {
            state: training::load_checkpoint(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        training::save_checkpoint(&self.state, &path).map_err(to_py)
    }

    /// Bytes of the checkpoint file this state would be saved as.
    fn checkpoint_bytes(&self) -> Vec<u8> {
        training::checkpoint_bytes(&self.state)
    }

    #[getter]
    fn epoch(&self) -> u64 {
        self.state.epoch
    }

    #[getter]
    fn global_step(&self) -> u64 {
        self.state.global_step
    }

    /// One epoch over `(query, document, explanation)` triples; returns the mean loss.
    fn train_epoch(&mut self, data: Vec<Triple>, vocab: &PyVocab) -> PyResult<f64> {
        let samples = encode_samples(&vocab.inner, &triples(data), &self.state.model).map_err(to_py)?;
        Ok(self.state.train_epoch(&samples).map_err(to_py)?.mean_loss)
    }

    fn teacher_forced_accuracy(&self, data: Vec<Triple>, vocab: &PyVocab) -> PyResult<f64> {
        let samples = encode_samples(&vocab.inner, &triples(data), &self.state.model).map_err(to_py)?;
        decoding::teacher_forced_accuracy(&self.state.params, &self.state.model, &samples).map_err(to_py)
    }

    #[pyo3(signature = (query, document, vocab, max_len = 16, ban_query = false))]
    fn decode(&self, query: &str, document: &str, vocab: &PyVocab, max_len: usize, ban_query: bool) -> PyResult<String> {
        let opts = DecodeOptions {
            max_len,
            ban_query_logits: ban_query,
        };
        decoding::greedy_decode(query, document, &self.state.params, &self.state.model, &vocab.inner, &opts)
            .map_err(to_py)
    }
}

/// Key-value documents as `(query, document, explanation)` tuples.
#[pyfunction]
#[pyo3(signature = (n, words = 120, fields = 2, max_value_words = 2, seed = 1))]
fn synth(n: usize, words: usize, fields: usize, max_value_words: usize, seed: u64) -> PyResult<Vec<Triple>> {
    let cfg = SynthConfig {
        fields_per_doc: fields,
        max_value_words,
        ..SynthConfig::default()
    };
    let out = datagen::synth_with_config(n, &datagen::synth_word_list(words), &cfg, seed).map_err(to_py)?;
    Ok(out.into_iter().map(|t| (t.query, t.document, t.explanation)).collect())
}

#[pyfunction]
fn porter_stem(word: &str) -> String {
    datagen::porter_stem(word)
}

fn word_lists(texts: &[String]) -> Vec<Vec<String>> {
    texts.iter().map(|t| metrics::words(t)).collect()
}

/// Corpus BLEU; `references[i]` holds the references of `candidates[i]`.
#[pyfunction]
#[pyo3(signature = (candidates, references, max_n = 1))]
fn corpus_bleu(candidates: Vec<String>, references: Vec<Vec<String>>, max_n: usize) -> PyResult<f64> {
    let refs: Vec<Vec<Vec<String>>> = references.iter().map(|r| word_lists(r)).collect();
    metrics::corpus_bleu(&word_lists(&candidates), &refs, max_n).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (candidate, references, max_n = 1))]
fn sentence_bleu(candidate: &str, references: Vec<String>, max_n: usize) -> PyResult<f64> {
    metrics::sentence_bleu(&metrics::words(candidate), &word_lists(&references), max_n).map_err(to_py)
}

/// `(precision, recall, f1)`.
#[pyfunction]
fn rouge_n(candidate: &str, reference: &str, n: usize) -> (f64, f64, f64) {
    let p = metrics::rouge_n(&metrics::words(candidate), &metrics::words(reference), n);
    (p.precision, p.recall, p.f1)
}

#[pyfunction]
fn rouge_l(candidate: &str, reference: &str) -> (f64, f64, f64) {
    let p = metrics::rouge_l(&metrics::words(candidate), &metrics::words(reference));
    (p.precision, p.recall, p.f1)
}

/// `(t, df, p)` of a two-tailed paired t-test.
#[pyfunction]
fn paired_ttest(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, usize, f64)> {
    let t = metrics::paired_ttest(&a, &b).map_err(to_py)?;
    Ok((t.t, t.df, t.p))
}

fn pairs(scores: Vec<TermScore>) -> Vec<(String, f64)> {
    scores.into_iter().map(|s| (s.term, s.score)).collect()
}

#[pyfunction]
#[pyo3(signature = (document, k = 10, window = baselines::DEFAULT_WINDOW))]
fn textrank(document: &str, k: usize, window: usize) -> PyResult<Vec<(String, f64)>> {
    baselines::textrank_keywords(document, k, window, &datagen::default_stopwords())
        .map(pairs)
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (document, query, k = 10, window = baselines::DEFAULT_WINDOW))]
fn ts_textrank(document: &str, query: &str, k: usize, window: usize) -> PyResult<Vec<(String, f64)>> {
    baselines::ts_textrank_keywords(document, query, k, window, &datagen::default_stopwords())
        .map(pairs)
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (query, document, corpus, samples = baselines::LIME_SAMPLES, seed = 1))]
fn lime(query: &str, document: &str, corpus: Vec<String>, samples: usize, seed: u64) -> PyResult<Vec<(String, f64)>> {
    let index = TfIdfIndex::build(corpus.iter().map(String::as_str)).map_err(to_py)?;
    baselines::lime_explain(&baselines::analyze(query), &baselines::analyze(document), &index, samples, seed)
        .map(pairs)
        .map_err(to_py)
}

#[pyfunction]
fn sensitivity(query: &str, document: &str, corpus: Vec<String>) -> PyResult<Vec<(String, f64)>> {
    let index = TfIdfIndex::build(corpus.iter().map(String::as_str)).map_err(to_py)?;
    Ok(pairs(baselines::sensitivity_explain(
        &baselines::analyze(query),
        &baselines::analyze(document),
        &index,
    )))
}

#[pyfunction]
fn select_top_tokens(scores: Vec<(String, f64)>) -> Vec<String> {
    let scores: Vec<TermScore> = scores.into_iter().map(|(term, score)| TermScore { term, score }).collect();
    baselines::select_top_tokens(&scores)
}

/// The quick invariant suite as `(name, passed, detail)` tuples.
#[pyfunction]
#[pyo3(signature = (seed = 1))]
fn run_selftest(seed: u64) -> Vec<(String, bool, String)> {
    selftest::run_quick(seed)
        .into_iter()
        .map(|o| (o.name, o.passed, o.detail))
        .collect()
}

#[pymodule]
fn genex(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVocab>()?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(porter_stem, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(sentence_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_n, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(paired_ttest, m)?)?;
    m.add_function(wrap_pyfunction!(textrank, m)?)?;
    m.add_function(wrap_pyfunction!(ts_textrank, m)?)?;
    m.add_function(wrap_pyfunction!(lime, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(select_top_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(run_selftest, m)?)?;
    Ok(())
}
