//! Python module `siege`: configuration, split graphs and the pipeline
//! stages of `siege-core`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict};

use siege_core::config::RunConfig;
use siege_core::downstream::{f1_score as core_f1, Variant};
use siege_core::encoder::EmbeddingTable;
use siege_core::graph::io::{load_split, save_split};
use siege_core::graph::{compute_overlap, finalize_split, GraphSplit};
use siege_core::ingest::{load_stream, InputFormat};
use siege_core::pipeline::{self, DataSource};
use siege_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn value_str(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if v.is_instance_of::<PyBool>() {
        return Ok(if v.extract::<bool>()? { "true" } else { "false" }.into());
    }
    Ok(v.str()?.to_string())
}

/// Run configuration. Keyword arguments override defaults; nested generator
/// keys are set with `set("synth.<field>", value)`.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = RunConfig::default();
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                inner.set(&k.extract::<String>()?, &value_str(&v)?).map_err(py_err)?;
            }
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: RunConfig::from_file(&path).map_err(py_err)? })
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.inner.set(key, &value_str(value)?).map_err(py_err)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    fn to_flat(&self) -> String {
        self.inner.to_flat()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn config_hash(&self) -> String {
        self.inner.config_hash()
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(hash={})", &self.inner.config_hash()[..12])
    }
}

fn cfg_or_default(config: Option<PyRunConfig>) -> RunConfig {
    config.map(|c| c.inner).unwrap_or_default()
}

/// A finalized split: largest weakly connected component with normalized
/// node attributes.
#[pyclass(name = "GraphSplit")]
struct PyGraphSplit {
    inner: GraphSplit,
}

#[pymethods]
impl PyGraphSplit {
    /// Builds split `split_index` (0-based) from one transaction CSV file.
    #[staticmethod]
    #[pyo3(signature = (path, split_index=0))]
    fn from_csv(py: Python<'_>, path: PathBuf, split_index: usize) -> PyResult<Self> {
        let inner = py
            .detach(|| {
                let txs = load_stream(&[&path], InputFormat::Csv, 0.0)?;
                finalize_split(split_index, &txs)
            })
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_split(&dir).map_err(py_err)? })
    }

    fn save<'py>(&self, py: Python<'py>, dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
        let meta = save_split(&self.inner, &dir).map_err(py_err)?;
        to_py(py, &meta)
    }

    #[getter]
    fn split_index(&self) -> usize {
        self.inner.split_index
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    #[getter]
    fn node_ids(&self) -> Vec<String> {
        self.inner.node_ids.clone()
    }

    /// Normalized attribute rows, 17 per node.
    fn attributes(&self) -> Vec<Vec<f32>> {
        let a = &self.inner.attributes;
        (0..a.rows()).map(|i| a.row(i).to_vec()).collect()
    }

    /// Undirected neighbors of node `i`.
    fn neighbors(&self, i: usize) -> PyResult<Vec<u32>> {
        self.inner
            .neighbors
            .get(i)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("node {i} out of range")))
    }

    /// Share of this split's nodes that also appear in `next`.
    fn overlap_ratio(&self, next: &PyGraphSplit) -> f64 {
        compute_overlap(&self.inner, &next.inner).1
    }

    fn __len__(&self) -> usize {
        self.inner.num_nodes()
    }

    fn __repr__(&self) -> String {
        format!(
            "GraphSplit(index={}, nodes={}, edges={})",
            self.inner.split_index,
            self.inner.num_nodes(),
            self.inner.num_edges()
        )
    }
}

/// Generates a synthetic stream into `out_dir`; returns the stage manifest.
#[pyfunction]
#[pyo3(signature = (out_dir, config=None, seed=None))]
fn synth<'py>(py: Python<'py>, out_dir: PathBuf, config: Option<PyRunConfig>, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = cfg_or_default(config);
    let seed = seed.unwrap_or(cfg.seed);
    let m = py.detach(|| pipeline::synth_stage(&cfg, seed, &out_dir)).map_err(py_err)?;
    to_py(py, &m)
}

#[pyfunction]
#[pyo3(signature = (inputs, out_dir, config=None))]
fn ingest<'py>(py: Python<'py>, inputs: Vec<PathBuf>, out_dir: PathBuf, config: Option<PyRunConfig>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = cfg_or_default(config);
    let m = py.detach(|| pipeline::ingest_stage(&cfg, &inputs, &out_dir)).map_err(py_err)?;
    to_py(py, &m)
}

#[pyfunction]
#[pyo3(signature = (ingest_dir, out_dir, config=None))]
fn build<'py>(py: Python<'py>, ingest_dir: PathBuf, out_dir: PathBuf, config: Option<PyRunConfig>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = cfg_or_default(config);
    let m = py.detach(|| pipeline::build_stage(&cfg, &ingest_dir, &out_dir)).map_err(py_err)?;
    to_py(py, &m)
}

#[pyfunction]
#[pyo3(signature = (build_dir, out_dir, config=None, seed=None))]
fn pretrain<'py>(
    py: Python<'py>,
    build_dir: PathBuf,
    out_dir: PathBuf,
    config: Option<PyRunConfig>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = cfg_or_default(config);
    let seed = seed.unwrap_or(cfg.seed);
    let m = py.detach(|| pipeline::pretrain_stage(&cfg, seed, &build_dir, &out_dir)).map_err(py_err)?;
    to_py(py, &m)
}

/// Embeds the split in `graph_dir` with the run's final encoder.
#[pyfunction]
fn embed<'py>(py: Python<'py>, run_dir: PathBuf, graph_dir: PathBuf, out_dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let m = py.detach(|| pipeline::embed_stage(&run_dir, &graph_dir, &out_dir)).map_err(py_err)?;
    to_py(py, &m)
}

/// `(node_ids, rows)` of an embedding directory.
#[pyfunction]
fn load_embeddings(dir: PathBuf) -> PyResult<(Vec<String>, Vec<Vec<f32>>)> {
    let emb = std::fs::read(dir.join("emb.f32")).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let nodes = std::fs::read_to_string(dir.join("nodes.txt")).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let t = EmbeddingTable::from_files(0, &emb, &nodes).map_err(py_err)?;
    let rows = (0..t.len()).map(|i| t.row(i).to_vec()).collect();
    Ok((t.node_ids, rows))
}

/// Embeds and classifies the evaluated split; returns the metrics report.
#[pyfunction(name = "eval")]
#[pyo3(signature = (run_dir, build_dir, labels, out_dir, config=None))]
fn eval_run<'py>(
    py: Python<'py>,
    run_dir: PathBuf,
    build_dir: PathBuf,
    labels: PathBuf,
    out_dir: PathBuf,
    config: Option<PyRunConfig>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = cfg_or_default(config);
    let r = py
        .detach(|| pipeline::eval_stage(&cfg, &run_dir, &build_dir, &labels, &out_dir))
        .map_err(py_err)?;
    to_py(py, &r)
}

/// Runs every stage for `config.seeds` seeds and returns one averaged
/// report per variant. `variants` are tags such as "full" or
/// "raw-features"; by default the configured variant only.
#[pyfunction(name = "pipeline")]
#[pyo3(signature = (work_dir, config=None, variants=None, inputs=None, labels=None))]
fn run_pipeline<'py>(
    py: Python<'py>,
    work_dir: PathBuf,
    config: Option<PyRunConfig>,
    variants: Option<Vec<String>>,
    inputs: Option<Vec<PathBuf>>,
    labels: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = cfg_or_default(config);
    let variants: Vec<Variant> = match variants {
        Some(v) => v.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(py_err)?,
        None => vec![cfg.variant()],
    };
    let source = match (inputs, labels) {
        (None, None) => DataSource::Synthetic,
        (Some(inputs), Some(labels)) => DataSource::Files { inputs, labels },
        _ => return Err(PyValueError::new_err("give both inputs and labels, or neither")),
    };
    let reports = py
        .detach(|| pipeline::run_pipeline(&cfg, &source, &variants, &work_dir))
        .map_err(py_err)?;
    to_py(py, &reports)
}

/// Harmonic mean of precision and recall (fractions or percentages).
#[pyfunction]
fn f1_score(precision: f64, recall: f64) -> f64 {
    core_f1(precision, recall)
}

#[pymodule]
fn siege(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyGraphSplit>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(ingest, m)?)?;
    m.add_function(wrap_pyfunction!(build, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(load_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(eval_run, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(f1_score, m)?)?;
    Ok(())
}
