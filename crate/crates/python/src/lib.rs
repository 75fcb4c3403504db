//! Python bindings: `import rtscope`.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rtscope_core::community::{louvain_with_trace, Partition as CorePartition};
use rtscope_core::config::ConfigLayer;
use rtscope_core::graph::{build_retweet_graph, to_undirected, NodeTable, RetweetGraph as CoreGraph};
use rtscope_core::ingest::parse_tweet_bytes;
use rtscope_core::metrics::{self, EntropyThresholds, UntrustworthinessFormula};
use rtscope_core::stats::{self, Alternative};
use rtscope_core::synth::{generate_synthetic, SyntheticSpec};
use rtscope_core::Error;

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        1 | 3 => PyValueError::new_err(e.to_string()),
        2 => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn from_json<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Canonical form of a URL as a dict with `canonical`, `domain` and `host`.
#[pyfunction]
fn normalize_url<'py>(py: Python<'py>, raw: &str) -> PyResult<Bound<'py, PyDict>> {
    let u = rtscope_core::ingest::normalize_url(raw).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("canonical", &u.canonical)?;
    d.set_item("domain", &u.domain)?;
    d.set_item("host", u.host())?;
    Ok(d)
}

#[pyfunction]
fn entropy(counts: Vec<u64>) -> PyResult<f64> {
    metrics::entropy(counts).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (h, low = 0.4, medium = 0.9))]
fn entropy_class(h: f64, low: f64, medium: f64) -> PyResult<&'static str> {
    let t = EntropyThresholds { low, medium };
    t.validate().map_err(py_err)?;
    Ok(t.classify(h).as_str())
}

#[pyfunction]
#[pyo3(signature = (t, r, t_max, formula = "harmonic-mean"))]
fn untrustworthiness(t: u64, r: f64, t_max: u64, formula: &str) -> PyResult<f64> {
    let f: UntrustworthinessFormula = formula.parse().map_err(py_err)?;
    metrics::untrustworthiness_with(f, t, r, t_max).map_err(py_err)
}

/// Mann-Whitney U test; returns `u_statistic`, `p_value`, `method` and,
/// for the exact method, `exact` as `(extreme, total)`.
#[pyfunction]
#[pyo3(signature = (a, b, alternative = "two-sided"))]
fn mann_whitney<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>, alternative: &str) -> PyResult<Bound<'py, PyDict>> {
    let alt: Alternative = alternative.parse().map_err(py_err)?;
    let r = stats::mann_whitney_with(&a, &b, alt).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("u_statistic", r.u_statistic)?;
    d.set_item("p_value", r.p_value)?;
    d.set_item("method", r.method.to_string())?;
    d.set_item("exact", r.exact)?;
    d.set_item("n_a", r.n_a)?;
    d.set_item("n_b", r.n_b)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (counts, q = 0.75))]
fn success_threshold(counts: Vec<u64>, q: f64) -> PyResult<u64> {
    stats::success_threshold(&counts, q).map_err(py_err)
}

/// Directed, weighted retweet graph: an edge `a -> b` counts retweets by `a`
/// of `b`'s tweets.
#[pyclass(frozen, module = "rtscope")]
struct RetweetGraph {
    inner: CoreGraph,
}

#[pymethods]
impl RetweetGraph {
    /// Builds the graph from a line-delimited JSON tweet file.
    #[staticmethod]
    fn from_jsonl(path: PathBuf) -> PyResult<Self> {
        let data = std::fs::read(&path).map_err(|e| py_err(Error::io(&path, e)))?;
        let parsed = parse_tweet_bytes(&data).map_err(py_err)?;
        let (inner, _) = build_retweet_graph(&parsed.records);
        Ok(RetweetGraph { inner })
    }

    /// Builds the graph from `(retweeter, original_author, weight)` triples.
    #[staticmethod]
    fn from_edges(edges: Vec<(String, String, u64)>) -> PyResult<Self> {
        let mut nodes = NodeTable::new();
        let ids: Vec<(u32, u32, u64)> = edges
            .iter()
            .map(|(a, b, w)| (nodes.intern(a), nodes.intern(b), *w))
            .collect();
        Ok(RetweetGraph {
            inner: CoreGraph::from_parts(nodes, ids).map_err(py_err)?,
        })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    #[getter]
    fn total_weight(&self) -> u64 {
        self.inner.total_weight()
    }

    fn nodes(&self) -> Vec<String> {
        self.inner.nodes().names().to_vec()
    }

    fn edges(&self) -> Vec<(String, String, u64)> {
        let n = self.inner.nodes();
        self.inner
            .edges()
            .iter()
            .map(|&(a, b, w)| (n.name(a).to_string(), n.name(b).to_string(), w))
            .collect()
    }

    /// Louvain communities of the undirected projection.
    #[pyo3(signature = (seed = 0))]
    fn louvain(&self, seed: u64) -> PyResult<Partition> {
        let out = louvain_with_trace(&to_undirected(&self.inner), seed).map_err(py_err)?;
        Ok(Partition {
            inner: out.partition,
            trace: out.trace,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "RetweetGraph(nodes={}, edges={}, weight={})",
            self.inner.node_count(),
            self.inner.edge_count(),
            self.inner.total_weight()
        )
    }
}

/// Community assignment; label 0 is the largest community.
#[pyclass(frozen, module = "rtscope")]
struct Partition {
    inner: CorePartition,
    trace: Vec<f64>,
}

#[pymethods]
impl Partition {
    #[getter]
    fn n_communities(&self) -> usize {
        self.inner.n_communities()
    }

    #[getter]
    fn modularity(&self) -> Option<f64> {
        self.inner.modularity()
    }

    /// Modularity after each sweep that moved a node.
    #[getter]
    fn trace(&self) -> Vec<f64> {
        self.trace.clone()
    }

    fn sizes(&self) -> Vec<usize> {
        self.inner.sizes()
    }

    fn labels<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        let nodes: &Arc<NodeTable> = self.inner.nodes();
        for (i, &l) in self.inner.labels().iter().enumerate() {
            d.set_item(nodes.name(i as u32), l)?;
        }
        Ok(d)
    }

    fn members(&self, label: u32) -> Vec<String> {
        let nodes = self.inner.nodes();
        self.inner
            .members(label)
            .into_iter()
            .map(|v| nodes.name(v).to_string())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Partition(communities={}, modularity={:?})",
            self.inner.n_communities(),
            self.inner.modularity()
        )
    }
}

/// Runs every stage with the given settings (the keys of the TOML config)
/// and returns the manifest.
#[pyfunction]
fn run_pipeline<'py>(py: Python<'py>, settings: Bound<'py, PyDict>) -> PyResult<Bound<'py, PyAny>> {
    let json: String = py.import("json")?.call_method1("dumps", (settings,))?.extract()?;
    let layer: ConfigLayer =
        serde_json::from_str(&json).map_err(|e| PyValueError::new_err(format!("settings: {e}")))?;
    let cfg = layer.resolve().map_err(py_err)?;
    let manifest = py.detach(|| rtscope_core::pipeline::run_pipeline(&cfg)).map_err(py_err)?;
    let text = serde_json::to_string(&manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    from_json(py, &text)
}

/// Writes a synthetic scenario to `out_dir`; `spec` is TOML text, the
/// built-in demo scenario when omitted.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 0, spec = None))]
fn synthesize<'py>(py: Python<'py>, out_dir: PathBuf, seed: u64, spec: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let spec: SyntheticSpec = match spec {
        Some(text) => toml::from_str(text).map_err(|e| PyValueError::new_err(format!("spec: {e}")))?,
        None => SyntheticSpec::demo(),
    };
    let data = generate_synthetic(&spec, seed).map_err(py_err)?;
    data.write_to(&out_dir).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("records", data.records.len())?;
    d.set_item("users", data.users.len())?;
    d.set_item("urls", data.urls.len())?;
    Ok(d)
}

#[pymodule]
fn rtscope(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(normalize_url, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_class, m)?)?;
    m.add_function(wrap_pyfunction!(untrustworthiness, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney, m)?)?;
    m.add_function(wrap_pyfunction!(success_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_class::<RetweetGraph>()?;
    m.add_class::<Partition>()?;
    Ok(())
}
