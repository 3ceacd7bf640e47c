//! Python bindings: graphs, the control laws, direct integration and the
//! scenario runner.

use std::collections::BTreeMap;

use fwat_core::analysis::Certificate;
use fwat_core::graph::{self, Laplacian, Network, Topology};
use fwat_core::protocol::{self, FwatParams, SecondOrderState};
use fwat_core::scenario::{self, ScenarioConfig};
use fwat_core::sim::{self, IntegratorConfig, Method};
use nalgebra::DVector;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: fwat_core::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for fwat_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Undirected graph on nodes `0..n`.
#[pyclass(name = "Graph", module = "fwat", frozen)]
struct PyGraph {
    topology: Topology,
    laplacian: Laplacian,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        Self::wrap(Topology::new(n, edges).py()?)
    }

    #[staticmethod]
    fn path(n: usize) -> PyResult<Self> {
        Self::wrap(Topology::path(n))
    }

    #[staticmethod]
    fn ring(n: usize) -> PyResult<Self> {
        Self::wrap(Topology::ring(n))
    }

    #[staticmethod]
    fn complete(n: usize) -> PyResult<Self> {
        Self::wrap(Topology::complete(n))
    }

    #[getter]
    fn n(&self) -> usize {
        self.topology.n()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.topology.edges().to_vec()
    }

    fn laplacian(&self) -> Vec<Vec<f64>> {
        let m = self.laplacian.matrix();
        (0..m.nrows())
            .map(|i| m.row(i).iter().copied().collect())
            .collect()
    }

    fn lambda2(&self) -> f64 {
        self.laplacian.lambda2()
    }

    fn is_connected(&self) -> bool {
        self.laplacian.is_connected()
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(n={}, edges={:?})",
            self.topology.n(),
            self.topology.edges()
        )
    }
}

impl PyGraph {
    fn wrap(topology: Topology) -> PyResult<Self> {
        let laplacian = graph::build_laplacian(&topology).py()?;
        Ok(Self {
            topology,
            laplacian,
        })
    }
}

/// Gains and deadlines: `eta`, `eta2`, `t0`, `t1`, `tf`.
#[pyclass(name = "Params", module = "fwat", frozen)]
struct PyParams(FwatParams);

#[pymethods]
impl PyParams {
    #[staticmethod]
    #[pyo3(signature = (eta, tf, t0 = 0.0))]
    fn single(eta: f64, tf: f64, t0: f64) -> PyResult<Self> {
        Ok(Self(FwatParams::single(eta, t0, tf).py()?))
    }

    #[staticmethod]
    #[pyo3(signature = (eta, eta2, t1, tf, t0 = 0.0))]
    fn double(eta: f64, eta2: f64, t1: f64, tf: f64, t0: f64) -> PyResult<Self> {
        Ok(Self(FwatParams::double(eta, eta2, t0, t1, tf).py()?))
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.0.eta
    }
    #[getter]
    fn eta2(&self) -> f64 {
        self.0.eta2
    }
    #[getter]
    fn t0(&self) -> f64 {
        self.0.t0
    }
    #[getter]
    fn t1(&self) -> f64 {
        self.0.t1
    }
    #[getter]
    fn tf(&self) -> f64 {
        self.0.tf
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "Params(eta={}, eta2={}, t0={}, t1={}, tf={})",
            p.eta, p.eta2, p.t0, p.t1, p.tf
        )
    }
}

/// Sampled run: times plus per-sample state, velocity and input rows.
#[pyclass(name = "Trajectory", module = "fwat", frozen)]
struct PyTrajectory(sim::Trajectory);

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn t(&self) -> Vec<f64> {
        self.0.times()
    }
    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        self.0.samples.iter().map(|s| s.x.clone()).collect()
    }
    #[getter]
    fn v(&self) -> Option<Vec<Vec<f64>>> {
        self.0.samples.iter().map(|s| s.v.clone()).collect()
    }
    #[getter]
    fn u(&self) -> Vec<Vec<f64>> {
        self.0.samples.iter().map(|s| s.u.clone()).collect()
    }
    #[getter]
    fn z_norm(&self) -> Vec<Option<f64>> {
        self.0.samples.iter().map(|s| s.diag.z_norm).collect()
    }
    #[getter]
    fn avg(&self) -> Vec<f64> {
        self.0.samples.iter().map(|s| s.diag.avg).collect()
    }
    #[getter]
    fn lyapunov(&self) -> Vec<f64> {
        self.0.samples.iter().map(|s| s.diag.lyapunov).collect()
    }
    /// Extra columns by name (formation runs record robot states here).
    #[getter]
    fn extra(&self) -> BTreeMap<String, Vec<f64>> {
        self.0
            .extra_names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                (
                    name.clone(),
                    self.0.samples.iter().map(|s| s.extra[k]).collect(),
                )
            })
            .collect()
    }
    fn max_avg_drift(&self) -> f64 {
        self.0.max_avg_drift()
    }
    fn to_csv(&self) -> PyResult<String> {
        fwat_core::io::trajectory_to_csv_string(&self.0).py()
    }
    fn __len__(&self) -> usize {
        self.0.samples.len()
    }
}

fn integrator(method: &str, dt: Option<f64>, guard: Option<f64>) -> PyResult<IntegratorConfig> {
    let method = match method {
        "rk45" | "rk45_adaptive" => Method::Rk45Adaptive,
        "rk4" | "rk4_fixed" => Method::Rk4Fixed,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown method `{other}`; use rk45 or rk4"
            )))
        }
    };
    let mut cfg = IntegratorConfig {
        method,
        eps_guard: guard,
        ..IntegratorConfig::default()
    };
    if let Some(dt) = dt {
        cfg.dt_base = dt;
    }
    Ok(cfg)
}

fn vector(x: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(x)
}

/// `u = η/(tf − t) L e^{−Lx}`.
#[pyfunction]
fn single_input(graph: &PyGraph, params: &PyParams, x: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
    let u = protocol::fwat_single_input(&vector(x), &graph.laplacian, &params.0, t).py()?;
    Ok(u.value.as_slice().to_vec())
}

/// The non-diffusive baseline `−η/(tf − t)(1 − e^{−Lx})`.
#[pyfunction]
fn pal_input(graph: &PyGraph, params: &PyParams, x: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
    let u = protocol::pal_input(&vector(x), &graph.laplacian, &params.0, t).py()?;
    Ok(u.value.as_slice().to_vec())
}

#[pyfunction]
fn phi1(graph: &PyGraph, params: &PyParams, x: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
    let u = protocol::phi1(&vector(x), &graph.laplacian, &params.0, t).py()?;
    Ok(u.value.as_slice().to_vec())
}

/// Double-integrator input for position `x` and velocity `v`.
#[pyfunction]
fn double_input(
    graph: &PyGraph,
    params: &PyParams,
    x: Vec<f64>,
    v: Vec<f64>,
    t: f64,
) -> PyResult<Vec<f64>> {
    let s = SecondOrderState::new(vector(x), vector(v)).py()?;
    let u = protocol::fwat_double_input(&s, &graph.laplacian, &params.0, t).py()?;
    Ok(u.value.as_slice().to_vec())
}

#[pyfunction]
fn tracking_error(
    graph: &PyGraph,
    params: &PyParams,
    x: Vec<f64>,
    v: Vec<f64>,
    t: f64,
) -> PyResult<Vec<f64>> {
    let s = SecondOrderState::new(vector(x), vector(v)).py()?;
    let z = protocol::tracking_error(&s, &graph.laplacian, &params.0, t).py()?;
    Ok(z.value.as_slice().to_vec())
}

#[pyfunction]
#[pyo3(signature = (graph, params, x0, method = "rk45", dt = None, guard = None, law = "fwat"))]
fn simulate_single(
    graph: &PyGraph,
    params: &PyParams,
    x0: Vec<f64>,
    method: &str,
    dt: Option<f64>,
    guard: Option<f64>,
    law: &str,
) -> PyResult<PyTrajectory> {
    let cfg = integrator(method, dt, guard)?;
    let net = Network::Fixed(graph.laplacian.clone());
    let law = match law {
        "fwat" => sim::SingleLaw::Fwat,
        "pal" => sim::SingleLaw::Pal,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown law `{other}`; use fwat or pal"
            )))
        }
    };
    Ok(PyTrajectory(
        sim::integrate_single_law(&vector(x0), &net, &params.0, &cfg, law).py()?,
    ))
}

#[pyfunction]
#[pyo3(signature = (graph, params, x0, v0, method = "rk45", dt = None, guard = None))]
#[allow(clippy::too_many_arguments)]
fn simulate_double(
    graph: &PyGraph,
    params: &PyParams,
    x0: Vec<f64>,
    v0: Vec<f64>,
    method: &str,
    dt: Option<f64>,
    guard: Option<f64>,
) -> PyResult<PyTrajectory> {
    let cfg = integrator(method, dt, guard)?;
    let net = Network::Fixed(graph.laplacian.clone());
    let s = SecondOrderState::new(vector(x0), vector(v0)).py()?;
    Ok(PyTrajectory(
        sim::integrate_double(&s, &net, &params.0, &cfg).py()?,
    ))
}

/// Exact solution of the isolated tracking error at time `t`.
#[pyfunction]
fn tracking_closed_form(z0: f64, eta2: f64, t0: f64, t1: f64, t: f64) -> f64 {
    fwat_core::analysis::tracking_closed_form(z0, eta2, t0, t1, t)
}

fn certificate_dict<'py>(py: Python<'py>, c: &Certificate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("kind", format!("{:?}", c.kind))?;
    d.set_item("achieved", c.achieved)?;
    d.set_item("achieved_time", c.achieved_time)?;
    d.set_item("tolerance", c.tolerance_used)?;
    d.set_item("witness_value", c.witness.value)?;
    d.set_item("witness_time", c.witness.time)?;
    Ok(d)
}

/// Outcome of a scenario run.
#[pyclass(name = "RunOutput", module = "fwat")]
struct PyRunOutput(scenario::RunOutput);

#[pymethods]
impl PyRunOutput {
    #[getter]
    fn passed(&self) -> bool {
        self.0.passed()
    }
    #[getter]
    fn labels(&self) -> Vec<String> {
        self.0.trajectories.iter().map(|(l, _)| l.clone()).collect()
    }
    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.0.warnings.clone()
    }
    #[getter]
    fn gain_status(&self) -> String {
        format!("{:?}", self.0.gain.status).to_lowercase()
    }
    fn trajectory(&self, label: &str) -> PyResult<PyTrajectory> {
        self.0
            .trajectory(label)
            .map(|t| PyTrajectory(t.clone()))
            .ok_or_else(|| PyValueError::new_err(format!("no trajectory `{label}`")))
    }
    /// Required and informational certificates plus summary numbers.
    fn result<'py>(&self, py: Python<'py>, label: &str) -> PyResult<Bound<'py, PyDict>> {
        let r = self
            .0
            .result(label)
            .ok_or_else(|| PyValueError::new_err(format!("no result `{label}`")))?;
        let d = PyDict::new(py);
        d.set_item("passed", r.passed())?;
        let req: PyResult<Vec<_>> = r.required.iter().map(|c| certificate_dict(py, c)).collect();
        let info: PyResult<Vec<_>> = r
            .informational
            .iter()
            .map(|c| certificate_dict(py, c))
            .collect();
        d.set_item("required", req?)?;
        d.set_item("informational", info?)?;
        d.set_item("summary", r.summary.clone())?;
        Ok(d)
    }
    /// Writes CSV files and the JSON sidecar into `out_dir`; returns their paths.
    #[pyo3(signature = (out_dir, emit_plots = false))]
    fn write(&self, out_dir: &str, emit_plots: bool) -> PyResult<Vec<String>> {
        let w = scenario::write_outputs(&self.0, std::path::Path::new(out_dir), emit_plots).py()?;
        let mut paths: Vec<String> = w.csv.iter().map(|p| p.display().to_string()).collect();
        paths.push(w.sidecar.display().to_string());
        paths.extend(w.plot_script.map(|p| p.display().to_string()));
        Ok(paths)
    }
}

#[pyfunction]
fn builtin_names() -> Vec<&'static str> {
    scenario::builtin_names()
}

#[pyfunction]
#[pyo3(signature = (name, seed = None))]
fn run_builtin(name: &str, seed: Option<u64>) -> PyResult<PyRunOutput> {
    let mut c = scenario::builtin(name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown builtin `{name}`")))?;
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(PyRunOutput(scenario::run(&c).py()?))
}

/// Runs a scenario given as TOML text.
#[pyfunction]
fn run_config(toml: &str) -> PyResult<PyRunOutput> {
    let c = ScenarioConfig::from_toml_str(toml).py()?;
    Ok(PyRunOutput(scenario::run(&c).py()?))
}

/// Recomputes certificates for a stored CSV; returns `(passed, matches_sidecar)`.
#[pyfunction]
fn verify(csv: &str, sidecar: &str) -> PyResult<(bool, bool)> {
    let r = scenario::verify(std::path::Path::new(csv), std::path::Path::new(sidecar)).py()?;
    Ok((r.passed(), r.matches_sidecar))
}

#[pymodule]
fn fwat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", scenario::VERSION)?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyRunOutput>()?;
    m.add_function(wrap_pyfunction!(single_input, m)?)?;
    m.add_function(wrap_pyfunction!(pal_input, m)?)?;
    m.add_function(wrap_pyfunction!(phi1, m)?)?;
    m.add_function(wrap_pyfunction!(double_input, m)?)?;
    m.add_function(wrap_pyfunction!(tracking_error, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_single, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_double, m)?)?;
    m.add_function(wrap_pyfunction!(tracking_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_names, m)?)?;
    m.add_function(wrap_pyfunction!(run_builtin, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
