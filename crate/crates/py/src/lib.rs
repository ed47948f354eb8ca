//! Python bindings for the `gtua` crate.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gtua::advice;
use gtua::gmm::{self, EmOptions, Profile};
use gtua::metrics;
use gtua::oracle::{self, Subset, TestSession};
use gtua::scheme::{self, GtuaConfig, PoolEstimate};
use gtua::v2g;

fn err(e: gtua::Error) -> PyErr {
    match e {
        gtua::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn pool_estimate(name: &str) -> PyResult<PoolEstimate> {
    match name {
        "residual-budget" => Ok(PoolEstimate::ResidualBudget),
        "advice-mass" => Ok(PoolEstimate::AdviceMass),
        _ => Err(PyValueError::new_err(format!("unknown pool estimate {name:?}"))),
    }
}

/// Per-item prior probabilities of being malicious.
#[pyclass(name = "ProbVector", frozen)]
struct PyProbVector(oracle::ProbVector);

#[pymethods]
impl PyProbVector {
    #[new]
    fn new(values: Vec<f64>) -> PyResult<Self> {
        oracle::ProbVector::new(values).map(Self).map_err(err)
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn mass(&self) -> f64 {
        self.0.mass()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("ProbVector(n={}, mass={})", self.0.len(), self.0.mass())
    }
}

/// Advice probabilities with their budget.
#[pyclass(name = "AdviceVector", frozen)]
struct PyAdviceVector(advice::AdviceVector);

#[pymethods]
impl PyAdviceVector {
    #[new]
    fn new(values: Vec<f64>, budget: f64) -> PyResult<Self> {
        advice::AdviceVector::new(values, budget).map(Self).map_err(err)
    }

    /// Scales nonnegative scores so they sum to `budget`, clamped to `(0, 1]`.
    #[staticmethod]
    fn normalize(raw: Vec<f64>, budget: f64) -> PyResult<Self> {
        advice::normalize_to_budget(&raw, budget).map(Self).map_err(err)
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    #[getter]
    fn budget(&self) -> f64 {
        self.0.budget()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("AdviceVector(n={}, budget={})", self.0.len(), self.0.budget())
    }
}

/// A ground-truth assignment of malicious items.
#[pyclass(name = "Instance", frozen)]
struct PyInstance(oracle::Instance);

#[pymethods]
impl PyInstance {
    #[staticmethod]
    fn sample(p: &PyProbVector, seed: u64) -> PyResult<Self> {
        oracle::sample_instance(&p.0, seed).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_truth(truth: Vec<bool>, p: &PyProbVector) -> PyResult<Self> {
        oracle::Instance::from_truth(truth, p.0.clone()).map(Self).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn truth(&self) -> Vec<bool> {
        self.0.truth().to_vec()
    }

    fn malicious(&self) -> Vec<usize> {
        self.0.malicious().into_members()
    }
}

fn everyone(inst: &oracle::Instance) -> Subset {
    Subset::range(0, inst.n())
}

/// Runs the advice-driven search; returns `(detected, tests)`.
#[pyfunction]
fn run_la(instance: &PyInstance, q: &PyAdviceVector) -> PyResult<(Vec<usize>, usize)> {
    let mut s = TestSession::new(&instance.0);
    let found = gtua::la::run_la(&mut s, &everyone(&instance.0), &q.0).map_err(err)?;
    Ok((found.into_members(), s.tests_used()))
}

/// Runs binary splitting with estimate `d_hat`; returns `(detected, tests)`.
#[pyfunction]
fn run_gbs(instance: &PyInstance, d_hat: usize) -> PyResult<(Vec<usize>, usize)> {
    let mut s = TestSession::new(&instance.0);
    let found = gtua::gbs::run_gbs(&mut s, &everyone(&instance.0), d_hat).map_err(err)?;
    Ok((found.into_members(), s.tests_used()))
}

/// Runs the combined scheme. `eta` defaults to `1/n`.
#[pyfunction]
#[pyo3(signature = (instance, q, eta=None, pool_estimate="residual-budget"))]
fn run_gtua<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    q: &PyAdviceVector,
    eta: Option<f64>,
    pool_estimate: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let config = GtuaConfig {
        eta: eta.unwrap_or(1.0 / instance.0.n() as f64),
        pool_estimate: self::pool_estimate(pool_estimate)?,
    };
    let mut s = TestSession::new(&instance.0);
    let run = scheme::run_gtua(&mut s, &q.0, &config).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("tests", run.tests())?;
    out.set_item("la_tests", run.la_tests)?;
    out.set_item("gbs_tests", run.gbs_tests)?;
    out.set_item("gbs_estimate", run.gbs_estimate)?;
    out.set_item("pool_p", run.pool_p.into_members())?;
    out.set_item("pool_c", run.pool_c.into_members())?;
    out.set_item("detected", run.detected.into_members())?;
    Ok(out)
}

/// `sum p ln(p / q)` in nats.
#[pyfunction]
fn pseudo_kl(p: &PyProbVector, q: &PyAdviceVector) -> PyResult<f64> {
    advice::pseudo_kl(&p.0, &q.0).map_err(err)
}

/// Noisy advice at divergence `epsilon`; returns `(advice, scale, realized, saturated)`.
#[pyfunction]
#[pyo3(signature = (p, epsilon, seed, tol=0.01))]
fn perturb(p: &PyProbVector, epsilon: f64, seed: u64, tol: f64) -> PyResult<(PyAdviceVector, f64, f64, bool)> {
    let r = advice::perturb_to_target(&p.0, epsilon, seed, tol).map_err(err)?;
    Ok((PyAdviceVector(r.advice), r.scale, r.realized, r.saturated))
}

/// Entropy of the prior in nats.
#[pyfunction]
fn entropy(p: &PyProbVector) -> f64 {
    metrics::entropy(&p.0)
}

#[pyfunction]
fn gbs_bound(n: usize, d: usize) -> usize {
    metrics::gbs_bound(n, d)
}

#[pyfunction]
fn la_prediction_bound(p: &PyProbVector, q: &PyAdviceVector) -> PyResult<f64> {
    metrics::la_prediction_bound(&p.0, &q.0).map_err(err)
}

#[pyfunction]
fn theorem1_bound(d: f64, n: usize, eta: f64, eps_p: f64, eps_c: f64) -> f64 {
    metrics::theorem1_bound(d, n, eta, eps_p, eps_c)
}

type Point = (f64, f64, f64);

fn profile(p: Point) -> Profile {
    Profile::new(p.0, p.1, p.2)
}

fn point(p: &Profile) -> Point {
    (p.arrival, p.duration, p.deviation)
}

/// Gaussian mixture over `(arrival, duration, deviation)`.
#[pyclass(name = "GmmModel", frozen)]
struct PyGmmModel(gmm::GmmModel);

#[pymethods]
impl PyGmmModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        gmm::GmmModel::from_json(text).map(Self).map_err(err)
    }

    /// Fits `k` components by EM.
    #[staticmethod]
    #[pyo3(signature = (points, k, seed=0))]
    fn fit(points: Vec<Point>, k: usize, seed: u64) -> PyResult<Self> {
        let points: Vec<Profile> = points.into_iter().map(profile).collect();
        gmm::fit_em(&points, k, &EmOptions::with_seed(seed)).map(Self).map_err(err)
    }

    /// The built-in three-component generator.
    #[staticmethod]
    fn synthetic() -> Self {
        Self(gmm::synthetic_generator())
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights.clone()
    }

    #[getter]
    fn loglik(&self) -> f64 {
        self.0.loglik
    }

    /// Draws `m` physically valid profiles.
    fn sample(&self, m: usize, seed: u64) -> Vec<Point> {
        gmm::sample(&self.0, m, seed).iter().map(point).collect()
    }

    fn log_likelihood(&self, points: Vec<Point>) -> f64 {
        let points: Vec<Profile> = points.into_iter().map(profile).collect();
        self.0.log_likelihood(&points)
    }

    fn bic(&self, points: Vec<Point>) -> f64 {
        let points: Vec<Profile> = points.into_iter().map(profile).collect();
        gmm::bic(&self.0, &points)
    }

    /// `P(deviation > threshold | arrival, duration)`.
    #[pyo3(signature = (arrival, duration, threshold=v2g::DEFAULT_DEVIATION_THRESHOLD))]
    fn tail_prob(&self, arrival: f64, duration: f64, threshold: f64) -> PyResult<f64> {
        gmm::tail_prob_deviation(&self.0, arrival, duration, threshold).map_err(err)
    }
}

/// Replays `samples` profiles drawn from `model` through hourly detection.
#[pyfunction]
#[pyo3(signature = (model, samples=100_000, seed=0, eta=None, horizon_hours=168, pool_estimate="residual-budget"))]
fn replay<'py>(
    py: Python<'py>,
    model: &PyGmmModel,
    samples: usize,
    seed: u64,
    eta: Option<f64>,
    horizon_hours: usize,
    pool_estimate: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let profiles = gmm::sample(&model.0, samples, seed);
    let options = v2g::ReplayOptions {
        eta,
        horizon_hours,
        seed,
        pool_estimate: self::pool_estimate(pool_estimate)?,
        ..v2g::ReplayOptions::default()
    };
    let report = v2g::replay(&profiles, &model.0, &options).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("total_tests", report.total_tests)?;
    out.set_item("total_user_hours", report.total_user_hours)?;
    out.set_item("total_malicious", report.total_malicious)?;
    out.set_item("reduction", report.reduction)?;
    let hourly: Vec<(usize, f64, f64, f64)> =
        report.by_hour_of_day.iter().map(|h| (h.hour, h.n_users, h.n_tests, h.ratio)).collect();
    out.set_item("by_hour_of_day", hourly)?;
    Ok(out)
}

#[pymodule]
fn gtua_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProbVector>()?;
    m.add_class::<PyAdviceVector>()?;
    m.add_class::<PyInstance>()?;
    m.add_class::<PyGmmModel>()?;
    m.add_function(wrap_pyfunction!(run_la, m)?)?;
    m.add_function(wrap_pyfunction!(run_gbs, m)?)?;
    m.add_function(wrap_pyfunction!(run_gtua, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_kl, m)?)?;
    m.add_function(wrap_pyfunction!(perturb, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(gbs_bound, m)?)?;
    m.add_function(wrap_pyfunction!(la_prediction_bound, m)?)?;
    m.add_function(wrap_pyfunction!(theorem1_bound, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    Ok(())
}
