//! Python bindings. Documents cross the boundary as `Document` objects;
//! reports come back as plain dicts via JSON.

use chrono::Utc;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use omniengine::dedup::{dedup_corpus, estimate_jaccard, minhash_signature, DedupConfig};
use omniengine::extract::{extract_document, ExtractOptions, Extraction};
use omniengine::image_pipeline::{self as img, BloomFilter, PixelImage};
use omniengine::metrics::{aggregate_documents, compute_metrics, BinSpec};
use omniengine::pipeline::{Pipeline, PipelineConfig};
use omniengine::scheduler::{cost_table, optimal_plan, Profiles};
use omniengine::stream_format::{parse_document, parse_timestamp, serialize_document, to_text_corpus, StreamDocument};
use omniengine::text_filters::{apply_detailed_rules, preliminary_filter, Decision, FilterVerdict, PreliminaryConfig, RuleSet};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, v: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn decision(v: &FilterVerdict) -> String {
    match &v.decision {
        Decision::Keep => "keep".into(),
        Decision::Modified => "modified".into(),
        Decision::Drop(r) => format!("drop:{r}"),
    }
}

/// One interleaved document.
#[pyclass(name = "Document", module = "omniengine", skip_from_py_object)]
#[derive(Clone)]
struct PyDocument {
    inner: StreamDocument,
}

#[pymethods]
impl PyDocument {
    #[staticmethod]
    fn from_json(line: &str) -> PyResult<Self> {
        parse_document(line).map(|inner| Self { inner }).map_err(value_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serialize_document(&self.inner).map_err(value_err)
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn url(&self) -> &str {
        &self.inner.meta.source_url
    }

    #[getter]
    fn image_count(&self) -> usize {
        self.inner.image_count()
    }

    #[getter]
    fn text_count(&self) -> usize {
        self.inner.text_count()
    }

    /// Image URLs in document order.
    fn image_urls(&self) -> Vec<String> {
        self.inner.images().map(|i| i.url.clone()).collect()
    }

    fn text(&self) -> String {
        to_text_corpus(&self.inner)
    }

    fn metrics(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &compute_metrics(&self.inner))
    }

    fn __len__(&self) -> usize {
        self.inner.elements.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Document(id={:?}, texts={}, images={})", self.inner.id, self.inner.text_count(), self.inner.image_count())
    }
}

fn unwrap_docs(docs: &[PyRef<'_, PyDocument>]) -> Vec<StreamDocument> {
    docs.iter().map(|d| d.inner.clone()).collect()
}

/// Parse JSONL; raises on the first bad line.
#[pyfunction]
fn parse_jsonl(text: &str) -> PyResult<Vec<PyDocument>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_document(l).map(|inner| PyDocument { inner }).map_err(|e| value_err(format!("line {}: {e}", i + 1))))
        .collect()
}

#[pyfunction]
fn to_jsonl(docs: Vec<PyRef<'_, PyDocument>>) -> PyResult<String> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serialize_document(&d.inner).map_err(value_err)?);
        out.push('\n');
    }
    Ok(out)
}

/// Returns `(document, None)` or `(None, drop_reason)`.
#[pyfunction]
#[pyo3(signature = (html, url, timestamp=None))]
fn extract_html(html: &[u8], url: &str, timestamp: Option<&str>) -> PyResult<(Option<PyDocument>, Option<String>)> {
    let ts = match timestamp {
        Some(t) => parse_timestamp(t).map_err(value_err)?,
        None => Utc::now(),
    };
    match extract_document(html, url, ts, &ExtractOptions::default()).map_err(value_err)? {
        Extraction::Document(inner) => Ok((Some(PyDocument { inner }), None)),
        Extraction::Dropped(r) => Ok((None, Some(r.as_str().to_string()))),
    }
}

/// Preliminary heuristics: `(decision, triggered)`.
#[pyfunction]
fn preliminary(doc: PyRef<'_, PyDocument>) -> (String, Vec<String>) {
    let v = preliminary_filter(&doc.inner, &PreliminaryConfig::default());
    (decision(&v), v.triggered_rules)
}

/// Detailed rules, bundled English set unless `rules_toml` is given.
#[pyfunction]
#[pyo3(signature = (doc, rules_toml=None))]
fn apply_rules(doc: PyRef<'_, PyDocument>, rules_toml: Option<&str>) -> PyResult<(PyDocument, String, Vec<String>)> {
    let rules = match rules_toml {
        Some(src) => RuleSet::from_toml(src).map_err(value_err)?,
        None => RuleSet::english(),
    };
    let (inner, v) = apply_detailed_rules(&doc.inner, &rules);
    Ok((PyDocument { inner }, decision(&v), v.triggered_rules))
}

/// Near-duplicate removal; keeps the latest of each group.
#[pyfunction]
#[pyo3(signature = (docs, threshold=0.8, seed=0))]
fn dedup(docs: Vec<PyRef<'_, PyDocument>>, threshold: f64, seed: u64) -> PyResult<Vec<PyDocument>> {
    let cfg = DedupConfig { threshold, seed, ..Default::default() };
    let (kept, _) = dedup_corpus(unwrap_docs(&docs), &cfg).map_err(value_err)?;
    Ok(kept.into_iter().map(|inner| PyDocument { inner }).collect())
}

/// MinHash estimate of the word-shingle Jaccard similarity.
#[pyfunction]
#[pyo3(signature = (a, b, k=256, shingle_width=5, seed=0))]
fn jaccard_estimate(a: &str, b: &str, k: usize, shingle_width: usize, seed: u64) -> PyResult<f64> {
    let sa = minhash_signature(a, k, shingle_width, seed).map_err(value_err)?;
    let sb = minhash_signature(b, k, shingle_width, seed).map_err(value_err)?;
    estimate_jaccard(&sa, &sb).map_err(value_err)
}

fn gray(width: u32, height: u32, pixels: &[u8]) -> PyResult<PixelImage> {
    PixelImage::new(width, height, pixels.to_vec()).map_err(value_err)
}

/// 64-bit difference hash of a row-major 8-bit grayscale image.
#[pyfunction]
fn dhash(width: u32, height: u32, pixels: &[u8]) -> PyResult<u64> {
    Ok(img::dhash(&gray(width, height, pixels)?))
}

#[pyfunction]
fn phash(width: u32, height: u32, pixels: &[u8]) -> PyResult<u64> {
    Ok(img::phash(&gray(width, height, pixels)?))
}

#[pyfunction]
fn hamming(a: u64, b: u64) -> u32 {
    img::hamming(a, b)
}

/// `(width, height, pixels)` from binary PGM bytes.
#[pyfunction]
fn decode_pgm<'py>(py: Python<'py>, data: &[u8]) -> PyResult<(u32, u32, Bound<'py, PyBytes>)> {
    let im = img::decode_pgm(data).map_err(value_err)?;
    Ok((im.width(), im.height(), PyBytes::new(py, im.pixels())))
}

#[pyclass(name = "BloomFilter", module = "omniengine")]
struct PyBloom {
    inner: BloomFilter,
}

#[pymethods]
impl PyBloom {
    #[new]
    #[pyo3(signature = (m, k=7))]
    fn new(m: usize, k: u32) -> PyResult<Self> {
        if m == 0 || k == 0 {
            return Err(PyValueError::new_err("m and k must be positive"));
        }
        Ok(Self { inner: BloomFilter::new(m, k) })
    }

    /// True when the key was (probably) present already.
    fn insert(&mut self, key: &str) -> bool {
        self.inner.insert(key)
    }

    fn __contains__(&self, key: &str) -> bool {
        self.inner.contains(key)
    }

    #[staticmethod]
    fn theoretical_fpr(n: usize, m: usize, k: u32) -> f64 {
        img::theoretical_fpr(n, m, k)
    }
}

#[pyfunction]
fn normalize_url(url: &str) -> PyResult<String> {
    img::normalize_url(url).map_err(value_err)
}

fn profiles(toml: Option<&str>) -> PyResult<Profiles> {
    match toml {
        Some(src) => Profiles::from_toml(src).map_err(value_err),
        None => Ok(Profiles::reference()),
    }
}

/// `[(plan, hours)]` for every stage ordering.
#[pyfunction]
#[pyo3(signature = (docs=1e9, profiles_toml=None))]
fn schedule_table(docs: f64, profiles_toml: Option<&str>) -> PyResult<Vec<(String, f64)>> {
    let table = cost_table(&profiles(profiles_toml)?, docs).map_err(value_err)?;
    Ok(table.into_iter().map(|(p, c)| (p.notation(), c.total_hours)).collect())
}

#[pyfunction]
#[pyo3(signature = (docs=1e9, profiles_toml=None))]
fn optimal_schedule(docs: f64, profiles_toml: Option<&str>) -> PyResult<(String, f64)> {
    let (p, c) = optimal_plan(&profiles(profiles_toml)?, docs).map_err(value_err)?;
    Ok((p.notation(), c.total_hours))
}

/// Histogram counts per metric plus the image/token joint table.
#[pyfunction]
fn corpus_stats(py: Python<'_>, docs: Vec<PyRef<'_, PyDocument>>) -> PyResult<Py<PyAny>> {
    let agg = aggregate_documents(&unwrap_docs(&docs), &BinSpec::default()).map_err(value_err)?;
    let hist: serde_json::Map<String, serde_json::Value> = agg
        .histograms
        .iter()
        .map(|(k, h)| (k.clone(), serde_json::json!({"edges": h.edges, "counts": h.counts})))
        .collect();
    let v = serde_json::json!({
        "documents": agg.documents,
        "mean_images": agg.mean_images(),
        "mean_tokens": agg.mean_tokens(),
        "histograms": hist,
        "joint": agg.joint_json(),
    });
    to_py(py, &v)
}

/// Run the configured pipeline over JSONL text. Returns
/// `(documents, report)`; rejects are listed in the report counts only.
#[pyfunction]
#[pyo3(signature = (jsonl, config_toml=None, hard_drop=None, seed=None, workers=None))]
fn run_pipeline(
    py: Python<'_>,
    jsonl: &str,
    config_toml: Option<&str>,
    hard_drop: Option<bool>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> PyResult<(Vec<PyDocument>, Py<PyAny>)> {
    let mut cfg = match config_toml {
        Some(src) => PipelineConfig::from_toml(src, &std::env::current_dir()?).map_err(value_err)?,
        None => PipelineConfig::default(),
    };
    if let Some(h) = hard_drop {
        cfg.hard_drop = h;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    let pipeline = Pipeline::new(cfg).map_err(value_err)?;
    let out = py.detach(|| pipeline.run_str(jsonl)).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let docs = out.documents.into_iter().map(|inner| PyDocument { inner }).collect();
    Ok((docs, to_py(py, &out.report)?))
}

#[pymodule(name = "omniengine")]
fn omniengine_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDocument>()?;
    m.add_class::<PyBloom>()?;
    m.add_function(wrap_pyfunction!(parse_jsonl, m)?)?;
    m.add_function(wrap_pyfunction!(to_jsonl, m)?)?;
    m.add_function(wrap_pyfunction!(extract_html, m)?)?;
    m.add_function(wrap_pyfunction!(preliminary, m)?)?;
    m.add_function(wrap_pyfunction!(apply_rules, m)?)?;
    m.add_function(wrap_pyfunction!(dedup, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(dhash, m)?)?;
    m.add_function(wrap_pyfunction!(phash, m)?)?;
    m.add_function(wrap_pyfunction!(hamming, m)?)?;
    m.add_function(wrap_pyfunction!(decode_pgm, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_url, m)?)?;
    m.add_function(wrap_pyfunction!(schedule_table, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_stats, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
