//! Python bindings: `import fedvarp`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use fedvarp_sim::harness::{self, RunConfig, RunOptions, RunOutcome, SweepAxis};
use fedvarp_sim::{
    Algorithm, ClusterAssignment, HyperParams, ModelVector, RoundUpdates, ServerAggregatorState,
    SimError,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: SimError) -> PyErr {
    if e.is_configuration() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn vector(values: Vec<f64>) -> PyResult<ModelVector> {
    ModelVector::new(values).map_err(py_err)
}

fn load(config_json: &str, overrides: Vec<String>) -> PyResult<RunConfig> {
    RunConfig::from_json(config_json)
        .and_then(|c| c.with_overrides(&overrides))
        .map_err(py_err)
}

/// Result of one simulated run.
#[pyclass(module = "fedvarp", frozen)]
struct RunResult {
    inner: RunOutcome,
}

#[pymethods]
impl RunResult {
    /// `(round, grad_norm_sq, global_loss, dist_to_opt_sq)` per logged round.
    #[getter]
    fn records(&self) -> Vec<(usize, f64, f64, f64)> {
        self.inner
            .records
            .iter()
            .map(|r| (r.round, r.grad_norm_sq, r.global_loss, r.dist_to_opt_sq))
            .collect()
    }

    #[getter]
    fn manifest_json(&self) -> String {
        self.inner.manifest.to_json()
    }

    /// `(round, message)` if the run aborted.
    #[getter]
    fn failure(&self) -> Option<(usize, String)> {
        self.inner
            .failure
            .as_ref()
            .map(|f| (f.round, f.message.clone()))
    }

    fn floor(&self) -> Option<f64> {
        self.inner.floor()
    }

    fn metrics_csv(&self) -> String {
        self.inner.metrics_csv()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(records={}, floor={:?}, failed={})",
            self.inner.records.len(),
            self.inner.floor(),
            self.inner.failure.is_some()
        )
    }
}

/// Runs a JSON configuration in memory.
#[pyfunction]
#[pyo3(signature = (config_json, overrides = Vec::new()))]
fn run(py: Python<'_>, config_json: &str, overrides: Vec<String>) -> PyResult<RunResult> {
    let cfg = load(config_json, overrides)?;
    let inner = py
        .detach(|| harness::execute(&cfg, RunOptions::parallel()))
        .map_err(py_err)?;
    Ok(RunResult { inner })
}

/// Runs a configuration and writes metrics.csv and manifest.json into `output_dir`.
#[pyfunction]
#[pyo3(signature = (config_json, output_dir, overrides = Vec::new()))]
fn run_to_dir(
    py: Python<'_>,
    config_json: &str,
    output_dir: PathBuf,
    overrides: Vec<String>,
) -> PyResult<RunResult> {
    let cfg = load(config_json, overrides)?;
    let inner = py
        .detach(|| harness::run_to_dir(&cfg, &output_dir, RunOptions::parallel()))
        .map_err(py_err)?;
    Ok(RunResult { inner })
}

/// Runs one configuration per value; returns `[(value, RunResult)]`.
#[pyfunction]
fn sweep(
    py: Python<'_>,
    config_json: &str,
    axis: &str,
    values: Vec<String>,
) -> PyResult<Vec<(String, RunResult)>> {
    let cfg = load(config_json, Vec::new())?;
    let axis: SweepAxis = axis.parse().map_err(py_err)?;
    let out = py
        .detach(|| harness::sweep(&cfg, axis, &values, RunOptions::default()))
        .map_err(py_err)?;
    Ok(out
        .points
        .into_iter()
        .map(|p| (p.value, RunResult { inner: p.outcome }))
        .collect())
}

/// Oracle and equivalence checks; returns `[(name, passed, detail)]`.
#[pyfunction]
fn verify(py: Python<'_>) -> Vec<(String, bool, String)> {
    py.detach(harness::verify)
        .checks
        .into_iter()
        .map(|c| (c.name, c.passed, c.detail))
        .collect()
}

#[pyfunction]
fn without_replacement_variance(xs: Vec<Vec<f64>>, m: usize) -> PyResult<f64> {
    let xs = xs.into_iter().map(vector).collect::<PyResult<Vec<_>>>()?;
    fedvarp_sim::without_replacement_variance(&xs, m).map_err(py_err)
}

#[pyfunction]
fn cluster_miss_probability(n: usize, r: usize, m: usize) -> PyResult<f64> {
    fedvarp_sim::cluster_miss_probability(n, r, m).map_err(py_err)
}

#[pyfunction]
fn effective_server_lr(eta_c: f64, eta_s: f64, tau: usize) -> PyResult<f64> {
    let h = HyperParams::new(eta_c, eta_s, tau, 1, 1, 1).map_err(py_err)?;
    Ok(h.effective_server_lr())
}

/// Server-side aggregator for one of fedavg, fedvarp, clusterfedvarp, mifa.
#[pyclass(module = "fedvarp")]
struct Aggregator {
    inner: ServerAggregatorState,
}

#[pymethods]
impl Aggregator {
    #[new]
    #[pyo3(signature = (algo, w0, num_clients, labels = None, num_clusters = None))]
    fn new(
        algo: &str,
        w0: Vec<f64>,
        num_clients: usize,
        labels: Option<Vec<usize>>,
        num_clusters: Option<usize>,
    ) -> PyResult<Self> {
        let algo: Algorithm = algo.parse().map_err(py_err)?;
        let assignment = match labels {
            Some(labels) => {
                let k = num_clusters
                    .unwrap_or_else(|| labels.iter().max().map_or(0, |x| x + 1));
                Some(ClusterAssignment::new(labels, k).map_err(py_err)?)
            }
            None => None,
        };
        let inner = ServerAggregatorState::new(algo, vector(w0)?, num_clients, assignment)
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Applies one round of updates `{client: delta}` and returns the new model.
    fn step(&mut self, deltas: BTreeMap<usize, Vec<f64>>, eta_tilde: f64) -> PyResult<Vec<f64>> {
        let round = self.inner.round;
        let n = self.inner.num_clients();
        let pairs = deltas
            .into_iter()
            .map(|(i, d)| Ok((i, vector(d)?)))
            .collect::<PyResult<Vec<_>>>()?;
        let upd = RoundUpdates::from_pairs(round, n, pairs).map_err(py_err)?;
        let w = self.inner.step(&upd, eta_tilde).map_err(py_err)?;
        Ok(w.as_slice().to_vec())
    }

    #[getter]
    fn w(&self) -> Vec<f64> {
        self.inner.w.as_slice().to_vec()
    }

    #[getter]
    fn round(&self) -> usize {
        self.inner.round
    }

    /// Stored client or cluster states, `None` for FedAvg.
    #[getter]
    fn table(&self) -> Option<Vec<Vec<f64>>> {
        let rows = match (self.inner.client_table(), self.inner.cluster_table()) {
            (Some((y, _)), _) | (None, Some((y, _))) => y,
            (None, None) => return None,
        };
        Some(rows.iter().map(|v| v.as_slice().to_vec()).collect())
    }
}

#[pymodule]
fn fedvarp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<RunResult>()?;
    m.add_class::<Aggregator>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_to_dir, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(without_replacement_variance, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_miss_probability, m)?)?;
    m.add_function(wrap_pyfunction!(effective_server_lr, m)?)?;
    Ok(())
}
