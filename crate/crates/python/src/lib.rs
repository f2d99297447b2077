//! Python bindings: catalog problems, single solver runs and TOML-driven sweeps.

use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

use trssqp::bench::{self, ExperimentSpec, MethodSpec, ResultRow};
use trssqp::oracles::{EstimationMode, NoiseFamily};
use trssqp::problem::{self, ProblemModel};
use trssqp::solver::{HessianStrategy, RunRecord};
use trssqp::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::UnknownProblem(_) | Error::Dimension(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    use serde_json::Value;
    match v {
        Value::Null => Ok(py.None()),
        Value::Bool(b) => b.into_py_any(py),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_py_any(py),
            None => n.as_f64().unwrap_or(f64::NAN).into_py_any(py),
        },
        Value::String(s) => s.into_py_any(py),
        Value::Array(items) => {
            let out = PyList::empty(py);
            for it in items {
                out.append(json_to_py(py, it)?)?;
            }
            out.into_py_any(py)
        }
        Value::Object(map) => {
            let out = PyDict::new(py);
            for (k, it) in map {
                out.set_item(k, json_to_py(py, it)?)?;
            }
            out.into_py_any(py)
        }
    }
}

fn row_to_py(py: Python<'_>, row: &ResultRow) -> PyResult<Py<PyAny>> {
    let v = serde_json::to_value(row).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn vector(problem: &ProblemModel, x: Vec<f64>) -> PyResult<DVector<f64>> {
    if x.len() != problem.d {
        return Err(PyValueError::new_err(format!(
            "point has length {}, problem `{}` has d = {}",
            x.len(),
            problem.name,
            problem.d
        )));
    }
    Ok(DVector::from_vec(x))
}

/// A catalog problem with exact evaluators.
#[pyclass(frozen, module = "trssqp_py")]
pub struct Problem {
    inner: ProblemModel,
}

#[pymethods]
impl Problem {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: problem::make_problem(name).map_err(py_err)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn x0(&self) -> Vec<f64> {
        self.inner.x0.as_slice().to_vec()
    }

    fn objective(&self, x: Vec<f64>) -> PyResult<f64> {
        let x = vector(&self.inner, x)?;
        self.inner.objective(&x).map_err(py_err)
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = vector(&self.inner, x)?;
        Ok(self.inner.gradient(&x).map_err(py_err)?.as_slice().to_vec())
    }

    fn constraints(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = vector(&self.inner, x)?;
        Ok(self.inner.constraints(&x).map_err(py_err)?.as_slice().to_vec())
    }

    /// Rows of the constraint Jacobian.
    fn jacobian(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let x = vector(&self.inner, x)?;
        let g = self.inner.jacobian(&x).map_err(py_err)?;
        Ok(g.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// `(kkt, tau_plus)` at `x`.
    fn kkt_residual(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        let x = vector(&self.inner, x)?;
        self.inner.kkt_residual_true(&x).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Problem({:?}, d={}, m={})", self.inner.name, self.inner.d, self.inner.m)
    }
}

/// Solver and oracle settings; the same keys as a `[[method]]` table.
#[pyclass(from_py_object, module = "trssqp_py")]
#[derive(Clone)]
pub struct Method {
    inner: MethodSpec,
}

#[pymethods]
impl Method {
    #[new]
    #[pyo3(signature = (
        label = "Id", alpha = 0, hessian = "id", noise = "gaussian", sigma = 1e-2, mode = "inject",
        eps_f = 0.0, eps_g = 0.0, eps_h = 0.0, max_iter = 100_000, soc = true, kappa_b = None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        label: &str,
        alpha: u8,
        hessian: &str,
        noise: &str,
        sigma: f64,
        mode: &str,
        eps_f: f64,
        eps_g: f64,
        eps_h: f64,
        max_iter: usize,
        soc: bool,
        kappa_b: Option<f64>,
    ) -> PyResult<Self> {
        let noise: NoiseFamily = noise.parse().map_err(py_err)?;
        let inner = MethodSpec {
            label: label.into(),
            alpha,
            hessian: hessian.parse::<HessianStrategy>().map_err(py_err)?,
            noise,
            sigma: if noise == NoiseFamily::None { 0.0 } else { sigma },
            mode: mode.parse::<EstimationMode>().map_err(py_err)?,
            eps_f,
            eps_g,
            eps_h,
            max_iter,
            soc,
            kappa_b,
            ..MethodSpec::default()
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Method({:?}, alpha={}, hessian={:?})",
            self.inner.label,
            self.inner.alpha,
            self.inner.hessian.as_str()
        )
    }
}

/// Outcome of one solver run.
#[pyclass(frozen, module = "trssqp_py")]
pub struct RunResult {
    rec: RunRecord,
    row: ResultRow,
}

#[pymethods]
impl RunResult {
    /// `Stopped`, `BudgetExhausted` or `Error(kind)`.
    #[getter]
    fn status(&self) -> String {
        self.rec.status.label()
    }

    #[getter]
    fn stopping_time(&self) -> Option<usize> {
        self.rec.stopping_time
    }

    #[getter]
    fn iters(&self) -> usize {
        self.rec.iters()
    }

    #[getter]
    fn final_x(&self) -> Vec<f64> {
        self.rec.final_x.as_slice().to_vec()
    }

    #[getter]
    fn final_kkt(&self) -> f64 {
        self.rec.final_kkt
    }

    #[getter]
    fn final_tau_plus(&self) -> f64 {
        self.rec.final_tau_plus
    }

    #[getter]
    fn accept_rate(&self) -> f64 {
        self.rec.accept_rate()
    }

    #[getter]
    fn kkt_trace(&self) -> Vec<f64> {
        self.rec.kkt_trace()
    }

    #[getter]
    fn delta_trace(&self) -> Vec<f64> {
        self.rec.logs.iter().map(|l| l.delta).collect()
    }

    /// The results-table row for this run.
    fn row(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        row_to_py(py, &self.row)
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(status={:?}, iters={}, final_kkt={:e})",
            self.rec.status.label(),
            self.rec.iters(),
            self.rec.final_kkt
        )
    }
}

/// Catalog keys, or only the benchmark set when `benchmark` is true.
#[pyfunction]
#[pyo3(signature = (benchmark = false))]
fn problems(benchmark: bool) -> Vec<&'static str> {
    if benchmark {
        problem::benchmark_keys()
    } else {
        problem::catalog_keys().to_vec()
    }
}

/// Runs `method` (default: `Method()`) on a catalog problem until
/// `kkt <= eps` (and `tau_plus <= eps` for alpha = 1) or the budget.
#[pyfunction]
#[pyo3(signature = (problem, method = None, eps = 1e-6, seed = 0))]
fn run(py: Python<'_>, problem: &str, method: Option<Method>, eps: f64, seed: u64) -> PyResult<RunResult> {
    let m = match method {
        Some(m) => m.inner,
        None => MethodSpec::default(),
    };
    if eps.is_nan() || eps < 0.0 {
        return Err(PyValueError::new_err(format!("eps must be >= 0, got {eps}")));
    }
    let name = problem.to_string();
    py.detach(move || {
        let m = MethodSpec {
            kappa_b: bench::resolve_kappa_b(&name, &m, eps),
            ..m
        };
        let rec = bench::run_method(&name, &m, eps, seed).map_err(py_err)?;
        let row = ResultRow::from_record(&rec, &m.label, eps);
        Ok(RunResult { rec, row })
    })
}

fn run_spec(py: Python<'_>, spec: ExperimentSpec) -> PyResult<Py<PyAny>> {
    let out = py
        .detach(move || bench::stopping_time_experiment(&spec))
        .map_err(py_err)?;
    let rows = PyList::empty(py);
    for r in &out.rows {
        rows.append(row_to_py(py, r)?)?;
    }
    rows.into_py_any(py)
}

/// Runs a sweep described by TOML text and returns the result rows (seed
/// rows followed by mean and median rows per group) as dicts. Output paths
/// in the spec are ignored.
#[pyfunction]
fn sweep(py: Python<'_>, spec_toml: &str) -> PyResult<Py<PyAny>> {
    let spec = ExperimentSpec::from_toml_str(spec_toml).map_err(py_err)?;
    run_spec(py, spec)
}

/// TOML text of a named preset, for editing before [`sweep`].
#[pyfunction]
fn preset(name: &str) -> PyResult<String> {
    ExperimentSpec::preset(name)
        .and_then(|s| s.to_toml_string())
        .map_err(py_err)
}

/// Adds every binding to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<Method>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(problems, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add("PRESETS", bench::PRESETS.to_vec())?;
    Ok(())
}

#[pymodule]
fn trssqp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
