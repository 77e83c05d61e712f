//! Python bindings. Complex vectors cross the boundary as `list[complex]`,
//! configs and reports as JSON-compatible dicts.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spectral_moduli::dynamics::{self, NlseConfig, NlseField, SpinModel, DEFAULT_POLE_MARGIN};
use spectral_moduli::experiment::{self, LearnGraphConfig, TrainExperimentConfig};
use spectral_moduli::sensitivity;
use spectral_moduli::topo;
use spectral_moduli::{Edge, Error, ScalarField};

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::DimensionMismatch { .. } | Error::MissingEdge(..) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn nlse(dt: f64, t_max: f64, steady_tol: f64) -> PyResult<NlseConfig> {
    let c = NlseConfig { dt, t_max, steady_tol, ..Default::default() };
    c.validate().map_err(err)?;
    Ok(c)
}

/// Undirected weighted graph on vertices `0..n`.
#[pyclass(name = "WeightedGraph", module = "spectral_moduli", from_py_object)]
#[derive(Clone)]
struct PyGraph(spectral_moduli::WeightedGraph);

#[pymethods]
impl PyGraph {
    #[new]
    fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        spectral_moduli::WeightedGraph::new(n, &edges).map(PyGraph).map_err(err)
    }

    #[getter]
    fn n_vertices(&self) -> usize {
        self.0.n_vertices()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.0.n_edges()
    }

    fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.0.weighted_edges()
    }

    fn weight(&self, u: usize, v: usize) -> Option<f64> {
        Edge::try_new(u, v).ok().and_then(|e| self.0.weight(e))
    }

    /// `(β₀, β₁)`.
    fn betti(&self) -> (usize, usize) {
        topo::betti_numbers(&self.0)
    }

    /// Shortest paths with edge length `1/w`; `inf` across components.
    fn metric(&self) -> Vec<Vec<f64>> {
        topo::graph_metric(&self.0).0
    }

    fn laplacian(&self, f: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
        spectral_moduli::graph::laplacian_apply(&self.0, &ScalarField(f)).map(|s| s.0).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("WeightedGraph(n={}, edges={:?})", self.0.n_vertices(), self.0.weighted_edges())
    }
}

/// Fixed-step NSE trajectory from unit-norm `psi0`; returns `(times, states)`.
#[pyfunction]
#[pyo3(signature = (graph, psi0, dt = 1e-3, t_max = 1.0, gamma = 1.0))]
fn integrate_nse(graph: &PyGraph, psi0: Vec<Complex64>, dt: f64, t_max: f64, gamma: f64) -> PyResult<(Vec<f64>, Vec<Vec<Complex64>>)> {
    let cfg = NlseConfig { gamma, ..nlse(dt, t_max, 1e-8)? };
    let psi0 = ScalarField(psi0);
    let field = NlseField::new(&graph.0, &psi0, gamma).map_err(err)?;
    let rec = dynamics::integrate(&field, psi0, &cfg).map_err(err)?;
    Ok((rec.times, rec.states.into_iter().map(|s| s.0).collect()))
}

/// Steady state `ψ∞` for initial data `psi0` (RK4 then Newton).
#[pyfunction]
#[pyo3(signature = (graph, psi0, dt = 0.1, t_max = 300.0, steady_tol = 1e-6))]
fn steady_state(graph: &PyGraph, psi0: Vec<Complex64>, dt: f64, t_max: f64, steady_tol: f64) -> PyResult<Vec<Complex64>> {
    let cfg = nlse(dt, t_max, steady_tol)?;
    sensitivity::solve_refined(&graph.0, &ScalarField(psi0), &cfg).map(|s| s.psi_inf.0).map_err(err)
}

/// Realified `∂ψ∞/∂w(u,v)` on the phase-fixed quotient.
#[pyfunction]
#[pyo3(signature = (graph, psi0, u, v, dt = 0.1, t_max = 300.0, steady_tol = 1e-6))]
fn dpsi_dw(graph: &PyGraph, psi0: Vec<Complex64>, u: usize, v: usize, dt: f64, t_max: f64, steady_tol: f64) -> PyResult<Vec<f64>> {
    let cfg = nlse(dt, t_max, steady_tol)?;
    let psi0 = ScalarField(psi0);
    let e = Edge::try_new(u, v).map_err(err)?;
    let steady = sensitivity::solve_refined(&graph.0, &psi0, &cfg).map_err(err)?;
    sensitivity::dpsi_dw(&graph.0, &psi0, &steady, e, cfg.gamma).map(|r| r.d_psi_inf).map_err(err)
}

/// Lockstep amplitude and spin integration; returns the deviation report.
#[pyfunction]
#[pyo3(signature = (graph, psi0, dt = 1e-3, t_max = 1.0, spin_model = "as_written"))]
fn gauge_check<'py>(
    py: Python<'py>,
    graph: &PyGraph,
    psi0: Vec<Complex64>,
    dt: f64,
    t_max: f64,
    spin_model: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let model = match spin_model {
        "as_written" => SpinModel::AsWritten,
        "gauge_image" => SpinModel::GaugeImage,
        other => return Err(PyValueError::new_err(format!("unknown spin_model {other:?}"))),
    };
    let r = dynamics::gauge_check(&graph.0, &ScalarField(psi0), &nlse(dt, t_max, 1e-8)?, model, DEFAULT_POLE_MARGIN).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("max_deviation", r.max_deviation)?;
    d.set_item("t_at_max", r.t_at_max)?;
    d.set_item("max_constraint_deviation", r.max_constraint_deviation)?;
    d.set_item("steps", r.steps)?;
    Ok(d)
}

/// Ground truth for a manifold spec dict; returns `(teacher graph, info)`.
#[pyfunction]
#[pyo3(signature = (manifold, inj_radius))]
fn ground_truth<'py>(py: Python<'py>, manifold: &Bound<'py, PyAny>, inj_radius: f64) -> PyResult<(PyGraph, Bound<'py, PyAny>)> {
    let spec: topo::ManifoldSpec = from_py(py, manifold)?;
    spec.validate().map_err(err)?;
    let truth = topo::build_ground_truth(&spec, inj_radius, Default::default()).map_err(err)?;
    let g = truth.teacher_graph().map_err(err)?;
    Ok((PyGraph(g), to_py(py, &truth.to_json())?))
}

/// Runs the moduli optimiser for a `learn_graph` config dict.
#[pyfunction]
fn learn_graph<'py>(py: Python<'py>, config: &Bound<'py, PyAny>) -> PyResult<(PyGraph, Bound<'py, PyAny>)> {
    let cfg: LearnGraphConfig = from_py(py, config)?;
    let out = py.detach(|| experiment::learn_graph(&cfg)).map_err(err)?;
    Ok((PyGraph(out.run.point.graph.clone()), to_py(py, &out.summary_json())?))
}

/// Trains the model (and baseline) for a `train` config dict; returns the gap table.
#[pyfunction]
fn train<'py>(py: Python<'py>, config: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: TrainExperimentConfig = from_py(py, config)?;
    let out = py.detach(|| experiment::train_experiment(&cfg)).map_err(err)?;
    to_py(py, &out.gap_table_json())
}

#[pymodule]
#[pyo3(name = "spectral_moduli")]
fn init_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(integrate_nse, m)?)?;
    m.add_function(wrap_pyfunction!(steady_state, m)?)?;
    m.add_function(wrap_pyfunction!(dpsi_dw, m)?)?;
    m.add_function(wrap_pyfunction!(gauge_check, m)?)?;
    m.add_function(wrap_pyfunction!(ground_truth, m)?)?;
    m.add_function(wrap_pyfunction!(learn_graph, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
