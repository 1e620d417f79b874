//! Python bindings. Structured results come back as plain dicts and lists.

use coxbalance::harness::config::PolicySection;
use coxbalance::harness::verify::{run_suite, Suite, VerifyOptions};
use coxbalance::model::q_to_s as core_q_to_s;
use coxbalance::policy::{pi_membership_check, routing_distribution as core_routing, PodSampling};
use coxbalance::sim::{per_server_microsim, run, InitialState, SimConfig, DEFAULT_BATCHES};
use coxbalance::stein::{corollary_bounds, lyapunov_drift, stein_decomposition, LyapunovFn};
use coxbalance::{AggregateState, CoxianParams, DerivedConstants, Error, ExactSolution, HeavyTraffic, Phase};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Solver(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

/// One system: servers, buffer, load, Coxian service and policy.
#[pyclass(name = "SystemConfig", frozen, from_py_object)]
#[derive(Clone)]
struct PySystemConfig {
    inner: coxbalance::SystemConfig,
}

#[pymethods]
impl PySystemConfig {
    #[new]
    #[pyo3(signature = (n, b, mu1, mu2, p, lam=None, policy="jsq", d=None, pod_sampling=None, alpha=None, beta=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n: usize,
        b: usize,
        mu1: f64,
        mu2: f64,
        p: f64,
        lam: Option<f64>,
        policy: &str,
        d: Option<usize>,
        pod_sampling: Option<&str>,
        alpha: Option<f64>,
        beta: f64,
    ) -> PyResult<Self> {
        let sampling = match pod_sampling {
            None => None,
            Some("with_replacement") => Some(PodSampling::WithReplacement),
            Some("without_replacement") => Some(PodSampling::WithoutReplacement),
            Some(other) => return Err(PyValueError::new_err(format!("unknown pod sampling {other:?}"))),
        };
        let policy = PolicySection { kind: policy.into(), d, pod_sampling: sampling }.build().map_err(to_py_err)?;
        let cox = CoxianParams::new(mu1, mu2, p).map_err(to_py_err)?;
        let inner = match (lam, alpha) {
            (Some(l), None) => coxbalance::SystemConfig::new(n, b, l, cox, policy),
            (None, Some(a)) => {
                let ht = HeavyTraffic::new(a, beta).map_err(to_py_err)?;
                coxbalance::SystemConfig::with_heavy_traffic(n, b, ht, cox, policy)
            }
            _ => return Err(PyValueError::new_err("give exactly one of lam or alpha")),
        }
        .map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn b(&self) -> usize {
        self.inner.b
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn policy(&self) -> String {
        self.inner.policy.to_string()
    }

    /// Derived constants such as `eta`, `k` and `c1`; needs mean service time one.
    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &DerivedConstants::from_config(&self.inner).map_err(to_py_err)?)
    }

    /// `7 mu_max / (sqrt N log N)`.
    fn theorem_bound(&self) -> PyResult<f64> {
        Ok(DerivedConstants::from_config(&self.inner).map_err(to_py_err)?.theorem_bound())
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.coxian;
        format!(
            "SystemConfig(n={}, b={}, lam={}, mu1={}, mu2={}, p={}, policy={})",
            self.inner.n, self.inner.b, self.inner.lambda, c.mu1, c.mu2, c.p, self.inner.policy
        )
    }
}

fn state_from(flat: Vec<u32>) -> PyResult<AggregateState> {
    AggregateState::from_flat(&flat).map_err(to_py_err)
}

/// Suffix sums `s[i-1] = [s_{i,1}, s_{i,2}]` of a flat count vector.
#[pyfunction]
fn q_to_s(state: Vec<u32>) -> PyResult<Vec<[f64; 2]>> {
    Ok(core_q_to_s(&state_from(state)?))
}

/// Routing probabilities `r[j] = [r_{j,1}, r_{j,2}]` for `j = 0..=b`.
#[pyfunction]
fn routing_distribution(cfg: &PySystemConfig, state: Vec<u32>) -> PyResult<Vec<[f64; 2]>> {
    let s = state_from(state)?;
    s.check(cfg.inner.n, cfg.inner.b).map_err(to_py_err)?;
    let r = core_routing(&cfg.inner.policy, &s).map_err(to_py_err)?;
    Ok((0..=cfg.inner.b).map(|j| [r.r(j, Phase::First), r.r(j, Phase::Second)]).collect())
}

/// Exact stationary metrics; `distribution=True` also returns `(state, probability)` pairs.
#[pyfunction]
#[pyo3(signature = (cfg, cap=2_000_000, distribution=false))]
fn exact_solve<'py>(py: Python<'py>, cfg: &PySystemConfig, cap: usize, distribution: bool) -> PyResult<Bound<'py, PyAny>> {
    let sol = py.detach(|| ExactSolution::solve(&cfg.inner, cap)).map_err(to_py_err)?;
    let mut v = serde_json::json!({
        "states": sol.space.len(),
        "reachable_states": sol.pi.reachable_states,
        "residual": sol.pi.residual,
        "metrics": sol.metrics(),
    });
    if distribution {
        v["distribution"] = sol.support().map(|(s, p)| serde_json::json!([s.to_flat(), p])).collect();
    }
    json_to_py(py, &v)
}

/// Aggregate (or per-server) simulation report.
#[pyfunction]
#[pyo3(signature = (cfg, horizon, seed, warmup=None, batches=DEFAULT_BATCHES, per_server=false, initial_state="empty"))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    cfg: &PySystemConfig,
    horizon: f64,
    seed: u64,
    warmup: Option<f64>,
    batches: usize,
    per_server: bool,
    initial_state: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let initial_state = match initial_state {
        "empty" => InitialState::Empty,
        "near_equilibrium" => InitialState::NearEquilibrium,
        other => return Err(PyValueError::new_err(format!("unknown initial state {other:?}"))),
    };
    let sim = SimConfig { horizon, warmup, seed, stream: 0, batches, initial_state };
    let mut report = py
        .detach(|| if per_server { per_server_microsim(&cfg.inner, &sim) } else { run(&cfg.inner, &sim) })
        .map_err(to_py_err)?;
    report.wall_clock_seconds = None;
    to_py(py, &report)
}

/// Terms of the Stein decomposition under the exact distribution.
#[pyfunction]
#[pyo3(signature = (cfg, cap=2_000_000))]
fn decomposition<'py>(py: Python<'py>, cfg: &PySystemConfig, cap: usize) -> PyResult<Bound<'py, PyAny>> {
    let d = py
        .detach(|| ExactSolution::solve(&cfg.inner, cap).and_then(|s| stein_decomposition(&s)))
        .map_err(to_py_err)?;
    to_py(py, &d)
}

/// Generator drift of `v_a`, `v_b`, `v_c` or `v_d` at a state.
#[pyfunction]
fn drift(v: &str, cfg: &PySystemConfig, state: Vec<u32>) -> PyResult<f64> {
    let v = LyapunovFn::parse(v).ok_or_else(|| PyValueError::new_err(format!("unknown Lyapunov function {v:?}")))?;
    lyapunov_drift(v, &state_from(state)?, &cfg.inner).map_err(to_py_err)
}

/// Closed-form delay bounds and their applicability flags.
#[pyfunction]
fn corollary<'py>(py: Python<'py>, cfg: &PySystemConfig) -> PyResult<Bound<'py, PyAny>> {
    let c = DerivedConstants::from_config(&cfg.inner).map_err(to_py_err)?;
    to_py(py, &corollary_bounds(&c, &cfg.inner).map_err(to_py_err)?)
}

#[pyfunction]
fn pi_membership<'py>(py: Python<'py>, cfg: &PySystemConfig) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &pi_membership_check(&cfg.inner.policy, &cfg.inner).map_err(to_py_err)?)
}

/// Runs one verification suite over the built-in grid.
#[pyfunction]
#[pyo3(signature = (suite, seed=0, cap=2_000_000))]
fn verify<'py>(py: Python<'py>, suite: &str, seed: u64, cap: usize) -> PyResult<Bound<'py, PyAny>> {
    let suite: Suite = suite.parse().map_err(to_py_err)?;
    let opts = VerifyOptions { cap, seed, ..Default::default() };
    let r = py.detach(|| run_suite(suite, &opts)).map_err(to_py_err)?;
    to_py(py, &r)
}

#[pymodule]
fn coxbalance_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystemConfig>()?;
    m.add_function(wrap_pyfunction!(q_to_s, m)?)?;
    m.add_function(wrap_pyfunction!(routing_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(exact_solve, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(decomposition, m)?)?;
    m.add_function(wrap_pyfunction!(drift, m)?)?;
    m.add_function(wrap_pyfunction!(corollary, m)?)?;
    m.add_function(wrap_pyfunction!(pi_membership, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
