//! Python bindings. Reports come back as plain dicts with the same keys as
//! the CLI JSON output.

use laser_coherence::bounds::{self, HeterodyneSetup};
use laser_coherence::coherence::{self, FitAxis};
use laser_coherence::control::{self, Precision, Which};
use laser_coherence::discrete;
use laser_coherence::glauber::{self, FourTimes};
use laser_coherence::solve::SolveMethod;
use laser_coherence::{Error, LaserModel};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde::Serialize;
use serde_json::Value;

fn py_err(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn value_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    match v {
        Value::Null => Ok(py.None().into_bound(py)),
        Value::Bool(b) => b.into_bound_py_any(py),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_bound_py_any(py),
            None => n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py),
        },
        Value::String(s) => s.into_bound_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(value_to_py(py, item)?)?;
            }
            Ok(list.into_any())
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, value_to_py(py, item)?)?;
            }
            Ok(dict.into_any())
        }
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, report: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    value_to_py(py, &v)
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// Cavity model with its steady state.
#[pyclass(name = "Model", module = "laser_coherence_py", from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    inner: LaserModel,
}

#[pymethods]
impl PyModel {
    /// The sin⁴ family of dimension `dim`, rescaled to the given flux.
    #[new]
    #[pyo3(signature = (dim, flux = None))]
    fn new(dim: usize, flux: Option<f64>) -> PyResult<Self> {
        let mut inner = laser_coherence::build_model(dim).map_err(py_err)?;
        if let Some(f) = flux {
            inner = inner.with_flux(f).map_err(py_err)?;
        }
        Ok(Self { inner })
    }

    /// Model with unit gain and the given loss rates `L_1..L_{D-1}`.
    #[staticmethod]
    fn custom(loss: Vec<f64>) -> PyResult<Self> {
        let inner = laser_coherence::custom_model(&loss).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn with_flux(&self, flux: f64) -> PyResult<Self> {
        let inner = self.inner.with_flux(flux).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn gain(&self) -> Vec<f64> {
        self.inner.gain.clone()
    }

    #[getter]
    fn loss(&self) -> Vec<f64> {
        self.inner.loss.clone()
    }

    #[getter]
    fn steady(&self) -> Vec<f64> {
        self.inner.steady.clone()
    }

    #[getter]
    fn flux(&self) -> f64 {
        self.inner.flux
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    #[getter]
    fn linewidth(&self) -> Option<f64> {
        self.inner.linewidth
    }

    fn fixed_point_residual(&self) -> f64 {
        self.inner.fixed_point_residual()
    }

    /// Computes the coherence and caches the linewidth on the model.
    fn coherence(&mut self) -> PyResult<f64> {
        coherence::coherence(&mut self.inner).map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!("Model(dim={}, flux={}, mu={:.6})", self.inner.dim, self.inner.flux, self.inner.mu)
    }
}

#[pyfunction]
#[pyo3(signature = (model, method = None, tol = coherence::SOLVE_TOL))]
fn coherence_report<'py>(py: Python<'py>, model: &PyModel, method: Option<&str>, tol: f64) -> PyResult<Bound<'py, PyAny>> {
    let method = match method {
        None | Some("auto") => None,
        Some("gmres") => Some(SolveMethod::Gmres),
        Some("lu") => Some(SolveMethod::BlockLu),
        Some(other) => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    let report = coherence::coherence_report(&model.inner, method, tol).map_err(py_err)?;
    to_dict(py, &report)
}

#[pyfunction]
#[pyo3(signature = (dims, window = (50.0, f64::INFINITY), axis = "dim"))]
fn sweep_and_fit<'py>(py: Python<'py>, dims: Vec<usize>, window: (f64, f64), axis: &str) -> PyResult<Bound<'py, PyAny>> {
    let axis = match axis {
        "dim" => FitAxis::Dim,
        "mu" => FitAxis::Mu,
        other => return Err(PyValueError::new_err(format!("unknown axis {other:?}"))),
    };
    let (rows, fit) = py.detach(|| coherence::sweep_and_fit(&dims, window, axis)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("rows", to_dict(py, &rows)?)?;
    out.set_item("fit", to_dict(py, &fit)?)?;
    Ok(out.into_any())
}

#[pyfunction]
fn g1(model: &PyModel, s: f64) -> PyResult<f64> {
    glauber::model_g1(&model.inner, s).map_err(py_err)
}

#[pyfunction]
fn g2(model: &PyModel, times: (f64, f64, f64, f64)) -> PyResult<f64> {
    let x = FourTimes::new(times.0, times.1, times.2, times.3);
    glauber::model_g2(&model.inner, &x).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (model, grid = 9, refine = true))]
fn max_delta_g2<'py>(py: Python<'py>, model: &PyModel, grid: usize, refine: bool) -> PyResult<Bound<'py, PyAny>> {
    let m = model.inner.clone();
    let report = py.detach(|| glauber::max_delta_g2(&m, grid, refine)).map_err(py_err)?;
    to_dict(py, &report)
}

#[pyfunction]
fn discrete_report<'py>(py: Python<'py>, model: &PyModel, gamma: f64) -> PyResult<Bound<'py, PyAny>> {
    let report = discrete::discrete_report(&model.inner, gamma).map_err(py_err)?;
    to_dict(py, &report)
}

#[pyfunction]
fn channel_equivalence(model: &PyModel, dt: f64) -> PyResult<f64> {
    discrete::channel_equivalence(&model.inner, dt).map_err(py_err)
}

#[pyfunction]
fn heisenberg_bound(mu: f64) -> f64 {
    bounds::heisenberg_bound(mu)
}

#[pyfunction]
fn sql_bound(mu: f64) -> f64 {
    bounds::sql_bound(mu)
}

#[pyfunction]
fn bound_chain<'py>(py: Python<'py>, mu: f64, coherence: f64) -> PyResult<Bound<'py, PyAny>> {
    to_dict(py, &bounds::bound_chain(mu, coherence).map_err(py_err)?)
}

/// Heterodyne mean-square error; `sigma` defaults to the optimum.
#[pyfunction]
#[pyo3(signature = (flux, linewidth, sigma = None))]
fn msse<'py>(py: Python<'py>, flux: f64, linewidth: f64, sigma: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
    let setup = match sigma {
        Some(s) => HeterodyneSetup::from_sigma(flux, linewidth, s),
        None => HeterodyneSetup::optimal(flux, linewidth),
    }
    .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("sigma", setup.sigma)?;
    out.set_item("tau", setup.tau)?;
    out.set_item("msse", bounds::msse_exact(&setup))?;
    out.set_item("msse_leading", bounds::msse_leading(&setup))?;
    out.set_item("parts", to_dict(py, &bounds::msse_parts(&setup))?)?;
    Ok(out.into_any())
}

#[pyfunction]
#[pyo3(signature = (nbar, cutoff = None))]
fn g_asymmetry<'py>(py: Python<'py>, nbar: f64, cutoff: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let cutoff = cutoff.unwrap_or_else(|| bounds::default_cutoff(nbar));
    to_dict(py, &bounds::g_asymmetry(nbar, cutoff).map_err(py_err)?)
}

#[pyfunction]
fn airy_zero() -> f64 {
    bounds::airy_zero()
}

#[pyfunction]
#[pyo3(signature = (model, which = "gain", precision = None))]
fn reconstruct_generator<'py>(
    py: Python<'py>,
    model: &PyModel,
    which: &str,
    precision: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let which: Which = parse(which)?;
    let precision: Option<Precision> = precision.map(parse).transpose()?;
    let report = control::reconstruct_generator(&model.inner, which, precision).map_err(py_err)?;
    to_dict(py, &report)
}

#[pymodule]
fn laser_coherence_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(coherence_report, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_and_fit, m)?)?;
    m.add_function(wrap_pyfunction!(g1, m)?)?;
    m.add_function(wrap_pyfunction!(g2, m)?)?;
    m.add_function(wrap_pyfunction!(max_delta_g2, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_report, m)?)?;
    m.add_function(wrap_pyfunction!(channel_equivalence, m)?)?;
    m.add_function(wrap_pyfunction!(heisenberg_bound, m)?)?;
    m.add_function(wrap_pyfunction!(sql_bound, m)?)?;
    m.add_function(wrap_pyfunction!(bound_chain, m)?)?;
    m.add_function(wrap_pyfunction!(msse, m)?)?;
    m.add_function(wrap_pyfunction!(g_asymmetry, m)?)?;
    m.add_function(wrap_pyfunction!(airy_zero, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_generator, m)?)?;
    Ok(())
}
