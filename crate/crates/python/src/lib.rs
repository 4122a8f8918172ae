//! Python bindings for `lindisc`.

use nalgebra::DVector;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use lindisc::feedback::{discrete_matrices as extract_matrices, Direction};
use lindisc::harness::{convergence_study, run_scenario, BaselineMode, RunOutcome, ScenarioConfig, Scheme};
use lindisc::verification::{run_suite, Suite};
use lindisc::{
    explicit_euler_map, implicit_euler_map, midpoint_map, ChartPoint, DoubleIntegrator, Error, SinExampleSystem,
};

type Matrix = Vec<Vec<f64>>;
type Slopes = Vec<(String, Option<f64>)>;

fn to_py(e: Error) -> PyErr {
    if e.is_numeric() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn point(x: Vec<f64>) -> PyResult<ChartPoint> {
    ChartPoint::new(x).map_err(to_py)
}

fn scalar(u: f64) -> DVector<f64> {
    DVector::from_element(1, u)
}

/// The sine example `x1' = a sin x2`, `x2' = -x1^2 + u`.
#[pyclass(frozen, name = "SinExample")]
struct PySinExample {
    inner: SinExampleSystem,
}

#[pymethods]
impl PySinExample {
    #[new]
    #[pyo3(signature = (a = 1.0))]
    fn new(a: f64) -> PyResult<Self> {
        Ok(PySinExample { inner: SinExampleSystem::new(a).map_err(to_py)? })
    }

    #[getter]
    fn a(&self) -> f64 {
        self.inner.a()
    }

    fn phi(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.phi().apply(&point(x)?).map_err(to_py)?.to_vec())
    }

    fn phi_inverse(&self, y: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.phi().apply_inverse(&point(y)?).map_err(to_py)?.to_vec())
    }

    fn psi(&self, x: Vec<f64>, u: f64) -> PyResult<f64> {
        Ok(self.inner.linearization().psi(&point(x)?, &scalar(u)).map_err(to_py)?[0])
    }

    /// Input `u` with `psi(x, u) = v`.
    fn control_from_v(&self, x: Vec<f64>, v: f64) -> PyResult<f64> {
        Ok(self.inner.linearization().control_from_v(&point(x)?, &scalar(v)).map_err(to_py)?[0])
    }

    fn ees_step(&self, x: Vec<f64>, u: f64, h: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.ees_scheme().step(&point(x)?, &scalar(u), h).map_err(to_py)?.to_vec())
    }

    fn ies_step(&self, x: Vec<f64>, u: f64, h: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.ees_scheme().step_adjoint(&point(x)?, &scalar(u), h).map_err(to_py)?.to_vec())
    }

    /// One multirate symmetric step under `u = psi^{-1}(x, K phi(x))`.
    #[pyo3(signature = (x, h, gain = vec![-10.0, -10.0]))]
    fn ses_step(&self, x: Vec<f64>, h: f64, gain: Vec<f64>) -> PyResult<Vec<f64>> {
        let c = self.inner.feedback(&gain).map_err(to_py)?;
        let st = self.inner.ees_scheme().multirate_symmetric_step(&c, &point(x)?, h).map_err(to_py)?;
        Ok(st.x_next.to_vec())
    }

    fn __repr__(&self) -> String {
        format!("SinExample(a={})", self.inner.a())
    }
}

/// A closed-loop run with its baseline and errors.
#[pyclass(frozen, name = "Run")]
struct PyRun {
    #[pyo3(get)]
    scheme: String,
    #[pyo3(get)]
    h: f64,
    #[pyo3(get)]
    times: Vec<f64>,
    #[pyo3(get)]
    states: Vec<Vec<f64>>,
    #[pyo3(get)]
    reference: Vec<Vec<f64>>,
    #[pyo3(get)]
    controls: Vec<f64>,
    #[pyo3(get)]
    errors: Vec<f64>,
    #[pyo3(get)]
    sup_error: Option<f64>,
    #[pyo3(get)]
    failure: Option<String>,
    csv: String,
}

#[pymethods]
impl PyRun {
    fn to_csv(&self) -> String {
        self.csv.clone()
    }

    fn __repr__(&self) -> String {
        let sup = self.sup_error.map_or("None".to_string(), |e| format!("{e:e}"));
        format!("Run(scheme={}, h={}, samples={}, sup_error={sup})", self.scheme, self.h, self.times.len())
    }
}

impl From<RunOutcome> for PyRun {
    fn from(r: RunOutcome) -> Self {
        PyRun {
            scheme: r.scheme.to_string(),
            h: r.h,
            times: r.trajectory.times.clone(),
            states: r.trajectory.states.iter().map(|x| x.to_vec()).collect(),
            reference: r.reference.iter().map(|x| x.to_vec()).collect(),
            controls: r.trajectory.controls_u.iter().map(|u| u[0]).collect(),
            errors: r.report.as_ref().map(|e| e.per_step_error.clone()).unwrap_or_default(),
            sup_error: r.sup_error(),
            failure: r.failure.clone(),
            csv: r.to_csv(),
        }
    }
}

fn config(
    a: f64,
    x0: Option<Vec<f64>>,
    gain: Option<Vec<f64>>,
    t_end: f64,
    baseline: &str,
) -> PyResult<ScenarioConfig> {
    let mut cfg = ScenarioConfig { a, t_end, ..ScenarioConfig::default() };
    cfg.baseline = baseline.parse::<BaselineMode>().map_err(PyValueError::new_err)?;
    if let Some(x0) = x0 {
        cfg.x0 = x0;
    }
    if let Some(g) = gain {
        cfg.gain = g;
    }
    cfg.validate().map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(cfg)
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (scheme, h = 0.01, t_end = 5.0, x0 = None, gain = None, a = 1.0, baseline = "held"))]
fn simulate(
    py: Python<'_>,
    scheme: &str,
    h: f64,
    t_end: f64,
    x0: Option<Vec<f64>>,
    gain: Option<Vec<f64>>,
    a: f64,
    baseline: &str,
) -> PyResult<PyRun> {
    let scheme: Scheme = scheme.parse().map_err(PyValueError::new_err)?;
    let cfg = config(a, x0, gain, t_end, baseline)?;
    let run = py.detach(|| run_scenario(&cfg, scheme, h)).map_err(to_py)?;
    Ok(run.into())
}

/// Returns `(table, slopes)` where `slopes` maps scheme name to the fitted order.
#[pyfunction]
#[pyo3(signature = (h_list = vec![1e-1, 1e-2, 1e-3], baseline = "held", t_end = 5.0))]
fn convergence(py: Python<'_>, h_list: Vec<f64>, baseline: &str, t_end: f64) -> PyResult<(String, Slopes)> {
    let cfg = config(1.0, None, None, t_end, baseline)?;
    let study = py.detach(|| convergence_study(&cfg, &Scheme::ALL, &h_list)).map_err(to_py)?;
    let slopes = study.fits.iter().map(|(s, f)| (s.to_string(), f.as_ref().ok().map(|f| f.slope))).collect();
    Ok((study.table.render(), slopes))
}

/// Runs a self-check suite; returns `(name, passed, value, threshold)` tuples.
#[pyfunction]
#[pyo3(signature = (suite = "all", seed = 42))]
fn verify(py: Python<'_>, suite: &str, seed: u64) -> PyResult<Vec<(String, bool, f64, f64)>> {
    let suite: Suite = suite.parse().map_err(PyValueError::new_err)?;
    let cfg = ScenarioConfig::default();
    let sys = cfg.system().map_err(to_py)?;
    let x0 = point(cfg.x0.clone())?;
    let checks = py.detach(|| run_suite(suite, &sys, &cfg.gain, &x0, seed));
    Ok(checks.into_iter().map(|c| (c.name, c.passed, c.value, c.threshold)).collect())
}

/// Discrete `(A_h, B_h)` of the double integrator under `map`
/// (`explicit-euler`, `implicit-euler` or `midpoint`).
#[pyfunction]
#[pyo3(signature = (map, h, backward = false))]
fn discrete_matrices(map: &str, h: f64, backward: bool) -> PyResult<(Matrix, Matrix)> {
    let r = match map {
        "explicit-euler" => explicit_euler_map(),
        "implicit-euler" => implicit_euler_map(),
        "midpoint" => midpoint_map(),
        other => return Err(PyValueError::new_err(format!("unknown map `{other}`"))),
    };
    let dir = if backward { Direction::Backward } else { Direction::Forward };
    let di = DoubleIntegrator;
    let d = extract_matrices(&r, &di.a(), &di.b(), h, dir).map_err(to_py)?;
    let rows = |m: &nalgebra::DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    Ok((rows(&d.a_h), rows(&d.b_h)))
}

#[pymodule]
fn lindisc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySinExample>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(convergence, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_matrices, m)?)?;
    Ok(())
}
