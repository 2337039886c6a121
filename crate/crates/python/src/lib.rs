use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use krflow_core::cli::{simulate, Scenario};
use krflow_core::config::parse_config;
use krflow_core::fields::{self, HermitianMatrixField, PeriodicGrid, ScalarField};
use krflow_core::flow::{self, FlowConfig};
use krflow_core::geometry::BackgroundFamily;
use krflow_core::{initial_data, monitors, KrfError};

fn py_err(e: KrfError) -> PyErr {
    match e {
        KrfError::Config { .. } | KrfError::InvalidGrid(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid(PeriodicGrid);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(n: usize, resolution: usize) -> PyResult<Self> {
        PeriodicGrid::new(n, resolution).map(Self).map_err(py_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.complex_dim()
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.0.resolution()
    }

    #[getter]
    fn point_count(&self) -> usize {
        self.0.point_count()
    }

    fn __repr__(&self) -> String {
        format!("Grid(n={}, N={})", self.0.complex_dim(), self.0.resolution())
    }
}

/// Real periodic field, row-major over `(x1, y1, ..., xn, yn)`.
#[pyclass(name = "Field", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyField(ScalarField);

#[pymethods]
impl PyField {
    #[new]
    fn new(grid: &PyGrid, values: Vec<f64>) -> PyResult<Self> {
        ScalarField::new(&grid.0, values).map(Self).map_err(py_err)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid().clone())
    }

    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn sup(&self) -> f64 {
        self.0.sup()
    }

    fn inf(&self) -> f64 {
        self.0.inf()
    }

    fn mean(&self) -> f64 {
        self.0.mean()
    }

    fn sup_distance(&self, other: &PyField) -> PyResult<f64> {
        self.0.sup_distance(&other.0).map_err(py_err)
    }

    /// `det(I + i ddbar phi)` against the flat metric.
    fn volume_ratio(&self) -> PyResult<PyField> {
        fields::volume_ratio(&self.0, &HermitianMatrixField::identity(self.0.grid()))
            .map(PyField)
            .map_err(py_err)
    }

    /// `tr_{omega_flat}(omega_flat + i ddbar phi)`.
    fn metric_trace(&self) -> PyResult<PyField> {
        fields::metric_trace(&HermitianMatrixField::identity(self.0.grid()), &self.0)
            .map(PyField)
            .map_err(py_err)
    }

    fn save(&self, path: &str, t: f64) -> PyResult<()> {
        fields::snapshot::write(path.as_ref(), &self.0, t).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<(PyField, f64)> {
        fields::snapshot::read(path.as_ref())
            .map(|(f, t)| (PyField(f), t))
            .map_err(py_err)
    }
}

#[pyfunction]
#[pyo3(signature = (grid, amplitude=2.0, frequency=1, axis=1))]
fn ridge_c11(grid: &PyGrid, amplitude: f64, frequency: usize, axis: usize) -> PyResult<PyField> {
    initial_data::gen_ridge_c11(amplitude, frequency, axis, &grid.0)
        .map(PyField)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (grid, amplitude=0.5, gamma=0.3, p=3.0, axis=1))]
fn cusp_lp(grid: &PyGrid, amplitude: f64, gamma: f64, p: f64, axis: usize) -> PyResult<PyField> {
    initial_data::gen_cusp_lp(amplitude, gamma, p, axis, &grid.0)
        .map(PyField)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (grid, amplitude, frequency=1, axis=1))]
fn smooth_mode(grid: &PyGrid, amplitude: f64, frequency: usize, axis: usize) -> PyResult<PyField> {
    initial_data::smooth_mode(amplitude, frequency, axis, &grid.0)
        .map(PyField)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (phi0, s, tau0=initial_data::DEFAULT_TAU0))]
fn approx_family(phi0: &PyField, s: f64, tau0: f64) -> PyResult<PyField> {
    initial_data::approx_family(&phi0.0, s, tau0)
        .map(PyField)
        .map_err(py_err)
}

/// Flow `phi0` on the flat torus and return `(times, potentials)` at the samples.
#[pyfunction]
#[pyo3(signature = (phi0, t_end, dt_max=1e-3, samples=None))]
fn flow_flat(
    py: Python<'_>,
    phi0: &PyField,
    t_end: f64,
    dt_max: f64,
    samples: Option<Vec<f64>>,
) -> PyResult<(Vec<f64>, Vec<PyField>)> {
    let mut cfg = FlowConfig::new(BackgroundFamily::flat(phi0.0.grid(), t_end), t_end);
    cfg.dt_max = dt_max;
    cfg.dt_init = dt_max;
    if let Some(s) = samples {
        cfg.sample_times = s;
    }
    let phi = phi0.0.clone();
    let traj = py.detach(|| flow::run(&cfg, &phi)).map_err(py_err)?;
    if let Some(a) = &traj.log.abort {
        return Err(py_err(a.error.clone()));
    }
    Ok(traj
        .samples
        .into_iter()
        .map(|s| (s.t, PyField(s.phi)))
        .unzip())
}

/// Run a configuration (same format as the CLI) and return the trace rows
/// and monitor verdicts without writing any files.
#[pyfunction]
fn run_config<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyDict>> {
    let config = parse_config(text).map_err(py_err)?;
    let hash = config.hash();
    let (scenario, result) = py
        .detach(|| {
            let scenario = Scenario::new(config, hash)?;
            let result = simulate(&scenario, None)?;
            Ok::<_, KrfError>((scenario, result))
        })
        .map_err(py_err)?;

    let out = PyDict::new(py);
    out.set_item("config_hash", &scenario.hash)?;
    let rows = result
        .trace
        .rows()
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            for (k, v) in monitors::TRACE_COLUMNS.iter().zip(r.trace_values()) {
                d.set_item(*k, v)?;
            }
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    out.set_item("rows", rows)?;
    match &result.abort {
        Some(a) => {
            out.set_item("abort", a.error.to_string())?;
            out.set_item("verdicts", Vec::<Bound<'py, PyDict>>::new())?;
        }
        None => {
            out.set_item("abort", py.None())?;
            let verdicts = scenario
                .evaluate(result.trace.rows(), &result.start)
                .into_iter()
                .map(|v| {
                    let d = PyDict::new(py);
                    d.set_item("monitor", v.monitor)?;
                    d.set_item("status", format!("{:?}", v.status).to_lowercase())?;
                    d.set_item("worst_margin", v.worst_margin)?;
                    d.set_item("constants", v.constants.into_iter().collect::<std::collections::HashMap<_, _>>())?;
                    Ok(d)
                })
                .collect::<PyResult<Vec<_>>>()?;
            out.set_item("verdicts", verdicts)?;
        }
    }
    Ok(out)
}

#[pyfunction]
fn scalar_inequality_margin(n: usize) -> f64 {
    monitors::scalar_inequality_margin(n)
}

#[pymodule]
fn krflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyField>()?;
    m.add_function(wrap_pyfunction!(ridge_c11, m)?)?;
    m.add_function(wrap_pyfunction!(cusp_lp, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_mode, m)?)?;
    m.add_function(wrap_pyfunction!(approx_family, m)?)?;
    m.add_function(wrap_pyfunction!(flow_flat, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(scalar_inequality_margin, m)?)?;
    Ok(())
}
