use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use failop_core::clf_tracking::ClfQuadratic;
use failop_core::incremental_gp::{incremental_update, UpdateBudget, UpdateOptions};
use failop_core::kernel_gp::{build_kernel_matrix, GpModel, RbfKernelParams};
use failop_core::qp_controller::{kkt_check, solve, ControlProblem, DEFAULT_LAMBDA_IOTA, DEFAULT_LAMBDA_ZETA};
use failop_core::safety_barrier::{convergence_envelope, CbfConstraintRow, CbfDiagnostics};
use failop_core::scenario::{run_episode, ScenarioConfig};
use failop_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_) | Error::Config(_) | Error::DimensionMismatch { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_python<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Squared-exponential kernel `theta_f * exp(-|x - x'|^2 / l_f^2)`.
#[pyclass(name = "RbfKernel", from_py_object)]
#[derive(Clone)]
struct PyRbfKernel {
    inner: RbfKernelParams,
}

#[pymethods]
impl PyRbfKernel {
    #[new]
    fn new(theta_f: f64, l_f: f64) -> PyResult<Self> {
        Ok(Self {
            inner: RbfKernelParams::new(theta_f, l_f).map_err(py_err)?,
        })
    }

    #[getter]
    fn theta_f(&self) -> f64 {
        self.inner.theta_f
    }

    #[getter]
    fn l_f(&self) -> f64 {
        self.inner.l_f
    }

    fn eval(&self, x1: Vec<f64>, x2: Vec<f64>) -> PyResult<f64> {
        failop_core::kernel_gp::rbf_eval(&self.inner, &x1, &x2).map_err(py_err)
    }

    fn matrix(&self, xs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let k = build_kernel_matrix(&self.inner, &xs).map_err(py_err)?;
        Ok(k.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    fn __repr__(&self) -> String {
        format!("RbfKernel(theta_f={}, l_f={})", self.inner.theta_f, self.inner.l_f)
    }
}

/// Budgeted GP regressor with O(N^2) insertion and replacement.
#[pyclass(name = "GaussianProcess")]
struct PyGaussianProcess {
    model: GpModel,
    budget: UpdateBudget,
}

#[pymethods]
impl PyGaussianProcess {
    #[new]
    #[pyo3(signature = (kernel, sigma_noise, budget = 20, jitter = 0.0))]
    fn new(kernel: PyRbfKernel, sigma_noise: f64, budget: usize, jitter: f64) -> PyResult<Self> {
        let model = GpModel::new(kernel.inner, sigma_noise, budget)
            .and_then(|m| m.with_jitter(jitter))
            .map_err(py_err)?;
        Ok(Self {
            model,
            budget: UpdateBudget::new(budget).map_err(py_err)?,
        })
    }

    /// Add one observation. Returns the index of the evicted point, if any.
    fn update(&mut self, x: Vec<f64>, y: f64) -> PyResult<Option<usize>> {
        let out = incremental_update(&mut self.model, &x, y, self.budget, UpdateOptions::default()).map_err(py_err)?;
        Ok(out.replaced)
    }

    /// Posterior `(mean, std)` at `x`.
    fn posterior(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        let p = self.model.posterior(&x).map_err(py_err)?;
        Ok((p.mean, p.std))
    }

    fn neg_log_marginal_likelihood(&self) -> PyResult<f64> {
        self.model.neg_log_marginal_likelihood().map_err(py_err)
    }

    fn information_gain(&self) -> PyResult<f64> {
        self.model.information_gain().map_err(py_err)
    }

    /// Fit the kernel hyperparameters and rebuild. Returns the new kernel.
    fn optimize(&mut self) -> PyResult<PyRbfKernel> {
        let out = self.model.optimize_hyperparameters().map_err(py_err)?;
        self.model.set_params(out.params).map_err(py_err)?;
        Ok(PyRbfKernel { inner: out.params })
    }

    fn inverse_residual(&self) -> f64 {
        self.model.inverse_residual()
    }

    #[getter]
    fn xs(&self) -> Vec<Vec<f64>> {
        self.model.dataset().xs().to_vec()
    }

    #[getter]
    fn ys(&self) -> Vec<f64> {
        self.model.dataset().ys().to_vec()
    }

    fn __len__(&self) -> usize {
        self.model.len()
    }
}

/// Solve one control program.
///
/// `rows` holds `(coef_u, rhs)` pairs for `coef_u * u + zeta >= rhs`; `clf`
/// is an optional `(c0, c1, sigma_v, c, v_err_sq, c_v)` tuple.
#[pyfunction]
#[pyo3(signature = (rows, u_bounds, clf = None, lambda_zeta = DEFAULT_LAMBDA_ZETA, lambda_iota = DEFAULT_LAMBDA_IOTA, fallback_u = 0.0))]
fn solve_control<'py>(
    py: Python<'py>,
    rows: Vec<(f64, f64)>,
    u_bounds: (f64, f64),
    clf: Option<(f64, f64, f64, f64, f64, f64)>,
    lambda_zeta: f64,
    lambda_iota: f64,
    fallback_u: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let prob = ControlProblem {
        cbf_rows: rows
            .into_iter()
            .map(|(coef_u, rhs)| CbfConstraintRow {
                coef_u,
                coef_zeta: 1.0,
                rhs,
                diagnostics: CbfDiagnostics {
                    h_now: f64::NAN,
                    eps_term: f64::NAN,
                    nominal_term: f64::NAN,
                },
                unactuated_violation: false,
            })
            .collect(),
        clf: clf.map(|(c0, c1, sigma_v, c, v_now_err_sq, c_v)| ClfQuadratic {
            c0,
            c1,
            sigma_v,
            c,
            v_now_err_sq,
            c_v,
        }),
        u_bounds: [u_bounds.0, u_bounds.1],
        lambda_zeta,
        lambda_iota,
    };
    let sol = solve(&prob, fallback_u);
    let kkt = kkt_check(&prob, &sol);
    let out = to_python(py, &sol)?;
    out.set_item("kkt_violations", kkt.violations)?;
    Ok(out)
}

/// `(1 - alpha)^k * h0`.
#[pyfunction]
fn envelope(h0: f64, alpha: f64, k: u64) -> f64 {
    convergence_envelope(h0, alpha, k)
}

/// Default scenario as TOML text.
#[pyfunction]
fn default_scenario() -> PyResult<String> {
    ScenarioConfig::default().to_toml_string().map_err(py_err)
}

/// Run one closed-loop episode.
///
/// Returns a dict with `metrics` (dict) and `trace` (list of per-step dicts).
#[pyfunction]
#[pyo3(signature = (scenario = None, seed = None, duration = None, ev = None, deterministic = false))]
fn simulate<'py>(
    py: Python<'py>,
    scenario: Option<&str>,
    seed: Option<u64>,
    duration: Option<f64>,
    ev: Option<(f64, f64)>,
    deterministic: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = match scenario {
        Some(text) => ScenarioConfig::from_toml_str(text).map_err(py_err)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = duration {
        cfg.duration = d;
    }
    if let Some((p, v)) = ev {
        cfg.initial.ev = [p, v];
    }
    if deterministic {
        cfg = cfg.deterministic();
    }
    let ep = py.detach(|| run_episode(&cfg)).map_err(py_err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("metrics", to_python(py, &ep.metrics)?)?;
    out.set_item("trace", to_python(py, &ep.trace)?)?;
    out.set_item("crashed", ep.crash.is_some())?;
    Ok(out.into_any())
}

#[pymodule]
fn failop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRbfKernel>()?;
    m.add_class::<PyGaussianProcess>()?;
    m.add_function(wrap_pyfunction!(solve_control, m)?)?;
    m.add_function(wrap_pyfunction!(envelope, m)?)?;
    m.add_function(wrap_pyfunction!(default_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
