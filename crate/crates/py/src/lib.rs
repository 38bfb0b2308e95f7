//! Python bindings. Structured results come back as plain dicts and lists.

use coded_queue::capacity::{self, Membership};
use coded_queue::regimes;
use coded_queue::routing::{self, OptimizerConfig};
use coded_queue::simulator;
use coded_queue::{ArrivalSchedule, Error, RoutingPolicy, RunConfig, SystemSpec, Thresholds};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

fn err(e: Error) -> PyErr {
    match e {
        Error::InvalidSystem(_) | Error::DimensionMismatch { .. } | Error::InvalidInput(_) | Error::Unsupported(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any().unbind(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any().unbind(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any().unbind(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any().unbind(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any().unbind(),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any().unbind()
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any().unbind()
        }
    })
}

fn ser<T: serde::Serialize>(py: Python<'_>, x: &T) -> PyResult<Py<PyAny>> {
    let v = serde_json::to_value(x).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

fn membership(py: Python<'_>, m: Membership) -> PyResult<Py<PyAny>> {
    ser(py, &m)
}

/// Topology: `n` servers, `k` job types, `n_coded` coded servers and
/// nominal shares `alpha` (uniform when omitted).
#[pyclass(name = "System", module = "codedq", frozen, skip_from_py_object)]
struct PySystem {
    inner: SystemSpec,
}

#[pymethods]
impl PySystem {
    #[new]
    #[pyo3(signature = (n, k, n_coded, alpha=None))]
    fn new(n: usize, k: usize, n_coded: usize, alpha: Option<Vec<f64>>) -> PyResult<Self> {
        let alpha = alpha.unwrap_or_else(|| vec![1.0 / k.max(1) as f64; k]);
        Ok(PySystem {
            inner: SystemSpec::build(n, k, n_coded, &alpha).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn n_coded(&self) -> usize {
        self.inner.n_coded()
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.alpha().to_vec()
    }

    #[getter]
    fn systematic(&self) -> Vec<usize> {
        self.inner.systematic().to_vec()
    }

    /// Recovery patterns of a 0-based job type.
    fn patterns(&self, py: Python<'_>, job_type: usize) -> PyResult<Py<PyAny>> {
        ser(py, &self.inner.recovery_patterns(job_type).map_err(err)?)
    }

    fn uncoded_contains(&self, py: Python<'_>, lam: Vec<f64>) -> PyResult<Py<PyAny>> {
        membership(py, capacity::uncoded_contains(&self.inner, &lam).map_err(err)?)
    }

    /// Coded-region membership by `"waterfill"` (closed form) or `"lp"`.
    #[pyo3(signature = (lam, method="waterfill"))]
    fn coded_contains(&self, py: Python<'_>, lam: Vec<f64>, method: &str) -> PyResult<Py<PyAny>> {
        let m = match method {
            "waterfill" => capacity::coded_contains_waterfill(&self.inner, &lam),
            "lp" => capacity::coded_contains_lp(&self.inner, &lam),
            other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
        };
        membership(py, m.map_err(err)?)
    }

    /// Largest `lambda_2` on the coded boundary at `lambda_1` (`k = 2`).
    fn k2_boundary(&self, lambda1: f64) -> PyResult<f64> {
        capacity::k2_boundary(&self.inner, lambda1).map_err(err)
    }

    fn classify_regime(&self, py: Python<'_>, lam: Vec<f64>) -> PyResult<Py<PyAny>> {
        ser(py, &regimes::classify_regime(&self.inner, &lam, &Thresholds::default()).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!(
            "System(n={}, k={}, n_coded={}, systematic={:?})",
            self.inner.n(),
            self.inner.k(),
            self.inner.n_coded(),
            self.inner.systematic()
        )
    }
}

/// Probabilistic routing policy over recovery patterns.
#[pyclass(name = "Policy", module = "codedq", frozen, skip_from_py_object)]
struct PyPolicy {
    inner: RoutingPolicy,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyPolicy { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn uniform_uncoded(system: &PySystem) -> Self {
        PyPolicy {
            inner: routing::uniform_uncoded_policy(&system.inner),
        }
    }

    #[staticmethod]
    fn heavy_regime(system: &PySystem, lam: Vec<f64>, istar: usize, kstar: usize) -> PyResult<Self> {
        Ok(PyPolicy {
            inner: routing::heavy_regime_policy(&system.inner, &lam, istar, kstar).map_err(err)?,
        })
    }

    /// Minimiser of the independence-approximated mean response.
    #[staticmethod]
    #[pyo3(signature = (system, lam, restarts=0, seed=42))]
    fn pseudo_optimal(system: &PySystem, lam: Vec<f64>, restarts: usize, seed: u64) -> PyResult<Self> {
        let cfg = OptimizerConfig {
            restarts,
            seed,
            ..OptimizerConfig::default()
        };
        Ok(PyPolicy {
            inner: routing::pseudo_optimal_policy(&system.inner, &lam, &cfg).map_err(err)?,
        })
    }

    fn own_prob(&self, job_type: usize) -> PyResult<f64> {
        if job_type >= self.inner.k() {
            return Err(PyValueError::new_err("job type out of range"));
        }
        Ok(self.inner.own_prob(job_type))
    }

    fn loads(&self, py: Python<'_>, system: &PySystem, lam: Vec<f64>) -> PyResult<Py<PyAny>> {
        ser(py, &routing::load_profile(&system.inner, &lam, &self.inner).map_err(err)?)
    }

    fn approx_mean_response(&self, system: &PySystem, lam: Vec<f64>) -> PyResult<f64> {
        Ok(routing::approx_mean_response(&system.inner, &lam, &self.inner).map_err(err)?.value)
    }

    fn __repr__(&self) -> String {
        format!("Policy({})", self.to_json().unwrap_or_default())
    }
}

/// Mean of the maximum of independent exponentials with the given rates.
#[pyfunction]
fn expected_max_exponentials(rates: Vec<f64>) -> PyResult<f64> {
    routing::expected_max_exponentials(&rates).map_err(err)
}

/// Simulates fixed arrival rates; returns the statistics as a dict.
#[pyfunction]
#[pyo3(signature = (system, lam, policy, departures=100_000, replications=4, seed=42))]
fn simulate(
    py: Python<'_>,
    system: &PySystem,
    lam: Vec<f64>,
    policy: &PyPolicy,
    departures: u64,
    replications: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let cfg = RunConfig {
        target_departures: departures,
        replications,
        seed,
        ..RunConfig::default()
    };
    let schedule = ArrivalSchedule::Fixed(lam);
    let (s, p) = (&system.inner, &policy.inner);
    let stats = py
        .detach(|| simulator::replicate(s, &schedule, p, &cfg))
        .map_err(err)?;
    ser(py, &stats)
}

#[pymodule]
fn codedq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(expected_max_exponentials, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
