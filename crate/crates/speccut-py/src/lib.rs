//! Python bindings: thin wrappers over the speccut library types plus
//! free functions mirroring its operations. Numeric results are plain
//! floats/lists; experiment runs go through JSON configs and come back
//! as CSV/JSON strings so Python tooling can consume them directly.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use speccut::discrepancy as dp;
use speccut::experiment as exp;
use speccut::model;
use speccut::spectrum::Spectrum;
use speccut::theory;
use speccut::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "Spectrum", frozen, from_py_object)]
#[derive(Clone)]
struct PySpectrum {
    inner: Spectrum,
}

#[pymethods]
impl PySpectrum {
    #[staticmethod]
    fn polynomial(q: f64) -> PyResult<Self> {
        Ok(Self { inner: Spectrum::polynomial(q).map_err(to_py)? })
    }

    #[staticmethod]
    fn exponential(a: f64) -> PyResult<Self> {
        Ok(Self { inner: Spectrum::exponential(a).map_err(to_py)? })
    }

    #[staticmethod]
    fn scaled_polynomial(q: f64, band_lo: f64, band_hi: f64, start: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Spectrum::scaled_polynomial(q, band_lo, band_hi, start).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn scaled_exponential(a: f64, band_lo: f64, band_hi: f64, start: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Spectrum::scaled_exponential(a, band_lo, band_hi, start).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn table(values: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: Spectrum::table(values).map_err(to_py)? })
    }

    fn singular_value(&self, j: usize) -> PyResult<f64> {
        self.inner.singular_value(j).map_err(to_py)
    }

    fn singular_value_sq(&self, j: usize) -> PyResult<f64> {
        self.inner.singular_value_sq(j).map_err(to_py)
    }

    fn variance_sum(&self, k: usize) -> PyResult<f64> {
        self.inner.variance_sum(k).map_err(to_py)
    }

    fn max_index(&self) -> Option<usize> {
        self.inner.max_index()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "SourceCondition", frozen, from_py_object)]
#[derive(Clone)]
struct PySourceCondition {
    inner: model::SourceCondition,
}

#[pymethods]
impl PySourceCondition {
    #[staticmethod]
    fn hoelder(nu: f64) -> Self {
        Self { inner: model::SourceCondition::Hoelder { nu } }
    }

    #[staticmethod]
    fn logarithmic(p: f64) -> Self {
        Self { inner: model::SourceCondition::Logarithmic { p } }
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "Profile", frozen, from_py_object)]
#[derive(Clone)]
struct PyProfile {
    inner: model::Profile,
}

#[pymethods]
impl PyProfile {
    #[staticmethod]
    fn flat_j(j: usize) -> Self {
        Self { inner: model::Profile::FlatJ { j } }
    }

    #[staticmethod]
    #[pyo3(signature = (s = 1.0))]
    fn power_decay(s: f64) -> Self {
        Self { inner: model::Profile::PowerDecay { s } }
    }

    #[staticmethod]
    fn random_sphere(seed: u64) -> Self {
        Self { inner: model::Profile::RandomSphere { seed } }
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "SolutionSpec", frozen, from_py_object)]
#[derive(Clone)]
struct PySolutionSpec {
    inner: model::SolutionSpec,
}

#[pymethods]
impl PySolutionSpec {
    #[new]
    fn new(
        condition: PySourceCondition,
        rho: f64,
        profile: PyProfile,
        n_rep: usize,
    ) -> PyResult<Self> {
        let inner = model::SolutionSpec {
            condition: condition.inner,
            rho,
            profile: profile.inner,
            n_rep,
        };
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "MPolicy", frozen, from_py_object)]
#[derive(Clone)]
struct PyMPolicy {
    inner: dp::MPolicy,
}

#[pymethods]
impl PyMPolicy {
    #[staticmethod]
    fn fixed_m(m: usize) -> Self {
        Self { inner: dp::MPolicy::FixedM { m } }
    }

    #[staticmethod]
    fn norm_bound(r: f64) -> Self {
        Self { inner: dp::MPolicy::NormBound { r } }
    }

    #[staticmethod]
    #[pyo3(signature = (theta = 0.1, window = 3, growth = 2.0, cap = None))]
    fn heuristic(theta: f64, window: usize, growth: f64, cap: Option<usize>) -> Self {
        Self {
            inner: dp::MPolicy::Heuristic { theta, window, growth, cap },
        }
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "DpConfig", frozen, from_py_object)]
#[derive(Clone)]
struct PyDpConfig {
    inner: dp::DpConfig,
}

#[pymethods]
impl PyDpConfig {
    #[new]
    fn new(tau: f64, m_policy: PyMPolicy) -> PyResult<Self> {
        let inner = dp::DpConfig { tau, m_policy: m_policy.inner };
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "Observation", frozen, from_py_object)]
#[derive(Clone)]
struct PyObservation {
    inner: model::Observation,
}

#[pymethods]
impl PyObservation {
    /// Wraps already-measured coefficients with their noise level.
    #[staticmethod]
    fn from_values(y: Vec<f64>, delta: f64) -> PyResult<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(PyValueError::new_err(format!(
                "noise level must be > 0, got {delta}"
            )));
        }
        Ok(Self {
            inner: model::Observation {
                y,
                delta,
                noise: model::NoiseKind::Gaussian,
                seed: 0,
            },
        })
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.clone()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!(
            "Observation(n={}, delta={}, seed={})",
            self.inner.n(),
            self.inner.delta,
            self.inner.seed
        )
    }
}

#[pyclass(name = "DpResult", frozen)]
struct PyDpResult {
    inner: dp::DpResult,
}

#[pymethods]
impl PyDpResult {
    #[getter]
    fn k_dp(&self) -> usize {
        self.inner.k_dp
    }

    #[getter]
    fn trace(&self) -> Vec<(usize, usize)> {
        self.inner.trace.clone()
    }

    #[getter]
    fn m_searched(&self) -> usize {
        self.inner.m_searched
    }

    #[getter]
    fn argmax_m(&self) -> usize {
        self.inner.argmax_m
    }

    fn __repr__(&self) -> String {
        format!(
            "DpResult(k_dp={}, m_searched={}, argmax_m={})",
            self.inner.k_dp, self.inner.m_searched, self.inner.argmax_m
        )
    }
}

#[pyfunction]
fn make_solution(spec: &PySolutionSpec, spectrum: &PySpectrum) -> PyResult<Vec<f64>> {
    model::make_solution(&spec.inner, &spectrum.inner).map_err(to_py)
}

#[pyfunction]
fn tail_bound(spec: &PySolutionSpec, spectrum: &PySpectrum) -> PyResult<f64> {
    model::tail_bound(&spec.inner, &spectrum.inner).map_err(to_py)
}

#[pyfunction]
fn forward(xhat: Vec<f64>, spectrum: &PySpectrum) -> PyResult<Vec<f64>> {
    model::forward(&xhat, &spectrum.inner).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (yhat, delta, n, noise = "gaussian", seed = 0))]
fn observe(yhat: Vec<f64>, delta: f64, n: usize, noise: &str, seed: u64) -> PyResult<PyObservation> {
    let kind: model::NoiseKind = noise.parse().map_err(to_py)?;
    Ok(PyObservation {
        inner: model::observe(&yhat, delta, n, kind, seed).map_err(to_py)?,
    })
}

#[pyfunction]
fn derive_stream_seed(root: u64, lane: u64, member: u64) -> u64 {
    model::derive_stream_seed(root, lane, member)
}

#[pyfunction]
fn discrepancy_index(y: Vec<f64>, delta: f64, tau: f64, m: usize) -> PyResult<usize> {
    dp::discrepancy_index(&y, delta, tau, m).map_err(to_py)
}

#[pyfunction]
fn modified_discrepancy(
    obs: &PyObservation,
    cfg: &PyDpConfig,
    spectrum: &PySpectrum,
) -> PyResult<PyDpResult> {
    Ok(PyDpResult {
        inner: dp::modified_discrepancy(&obs.inner, &cfg.inner, &spectrum.inner).map_err(to_py)?,
    })
}

#[pyfunction]
fn cutoff_estimate(obs: &PyObservation, spectrum: &PySpectrum, k: usize) -> PyResult<Vec<f64>> {
    dp::cutoff_estimate(&obs.inner, &spectrum.inner, k).map_err(to_py)
}

/// Returns (total, data_propagation_sq, approximation_sq).
#[pyfunction]
#[pyo3(signature = (estimate, xhat, tail_sq = 0.0))]
fn estimation_error(estimate: Vec<f64>, xhat: Vec<f64>, tail_sq: f64) -> PyResult<(f64, f64, f64)> {
    let b = dp::estimation_error(&estimate, &xhat, tail_sq).map_err(to_py)?;
    Ok((b.total(), b.data_propagation_sq, b.approximation_sq))
}

fn poly_spec(nu: f64, q: f64, rho: f64, delta: f64) -> theory::RateSpec {
    theory::RateSpec {
        class: theory::RateClass::Poly { nu, q },
        rho,
        delta,
    }
}

#[pyfunction]
fn apriori_k_poly(nu: f64, q: f64, rho: f64, delta: f64) -> PyResult<usize> {
    theory::apriori_k_poly(&poly_spec(nu, q, rho, delta)).map_err(to_py)
}

#[pyfunction]
fn rate_poly(nu: f64, q: f64, rho: f64, delta: f64) -> PyResult<f64> {
    theory::rate_poly(&poly_spec(nu, q, rho, delta)).map_err(to_py)
}

#[pyfunction]
fn rate_constant_poly(tau: f64, nu: f64, q: f64) -> PyResult<f64> {
    theory::rate_constant_poly(tau, nu, q).map_err(to_py)
}

#[pyfunction]
fn rate_exp(p: f64, a: f64, rho: f64, delta: f64) -> PyResult<f64> {
    theory::rate_exp(&theory::RateSpec {
        class: theory::RateClass::Exp { p, a },
        rho,
        delta,
    })
    .map_err(to_py)
}

#[pyfunction]
fn solve_power_exp(a: f64, b: f64, y: f64) -> PyResult<f64> {
    theory::solve_power_exp(a, b, y).map_err(to_py)
}

#[pyfunction]
fn power_exp_asymptote(a: f64, b: f64, y: f64) -> PyResult<f64> {
    theory::power_exp_asymptote(a, b, y).map_err(to_py)
}

#[pyfunction]
fn m_opt_exp(delta: f64, rho: f64, p: f64, a: f64) -> PyResult<f64> {
    theory::m_opt_exp(delta, rho, p, a).map_err(to_py)
}

/// Returns (variance, worst_case_bias_sq) at cut-off k.
#[pyfunction]
fn analytic_mse(
    spectrum: &PySpectrum,
    condition: &PySourceCondition,
    rho: f64,
    k: usize,
    delta: f64,
) -> PyResult<(f64, f64)> {
    theory::analytic_mse(&spectrum.inner, &condition.inner, rho, k, delta).map_err(to_py)
}

#[pyfunction]
fn rate_regression(points: Vec<(f64, f64)>) -> PyResult<f64> {
    exp::rate_regression(&points).map_err(to_py)
}

#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    exp::spearman(&a, &b).map_err(to_py)
}

fn parse_config(config_json: &str) -> PyResult<exp::ExperimentConfig> {
    serde_json::from_str(config_json)
        .map_err(|e| PyValueError::new_err(format!("config: {e}")))
}

/// Runs the experiment described by a JSON config; returns the records
/// as a CSV string (same columns as the CLI output).
#[pyfunction]
fn run_experiment_csv(config_json: &str) -> PyResult<String> {
    let cfg = parse_config(config_json)?;
    let records = exp::run_experiment(&cfg).map_err(to_py)?;
    Ok(exp::records_to_csv(&records))
}

/// Runs the experiment and returns the summary as a JSON string.
#[pyfunction]
fn experiment_summary_json(config_json: &str) -> PyResult<String> {
    let cfg = parse_config(config_json)?;
    let records = exp::run_experiment(&cfg).map_err(to_py)?;
    let summary = exp::summarize(&cfg, &records).map_err(to_py)?;
    serde_json::to_string_pretty(&summary).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Returns (empirical_mse, analytic_mse, z_score) at a fixed cut-off.
#[pyfunction]
fn mse_vs_analytic(config_json: &str, k: usize) -> PyResult<(f64, f64, f64)> {
    let cfg = parse_config(config_json)?;
    let m = exp::mse_vs_analytic(&cfg, k).map_err(to_py)?;
    Ok((m.empirical, m.analytic, m.z_score))
}

#[pymodule]
fn speccut_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpectrum>()?;
    m.add_class::<PySourceCondition>()?;
    m.add_class::<PyProfile>()?;
    m.add_class::<PySolutionSpec>()?;
    m.add_class::<PyMPolicy>()?;
    m.add_class::<PyDpConfig>()?;
    m.add_class::<PyObservation>()?;
    m.add_class::<PyDpResult>()?;
    m.add_function(wrap_pyfunction!(make_solution, m)?)?;
    m.add_function(wrap_pyfunction!(tail_bound, m)?)?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(observe, m)?)?;
    m.add_function(wrap_pyfunction!(derive_stream_seed, m)?)?;
    m.add_function(wrap_pyfunction!(discrepancy_index, m)?)?;
    m.add_function(wrap_pyfunction!(modified_discrepancy, m)?)?;
    m.add_function(wrap_pyfunction!(cutoff_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(estimation_error, m)?)?;
    m.add_function(wrap_pyfunction!(apriori_k_poly, m)?)?;
    m.add_function(wrap_pyfunction!(rate_poly, m)?)?;
    m.add_function(wrap_pyfunction!(rate_constant_poly, m)?)?;
    m.add_function(wrap_pyfunction!(rate_exp, m)?)?;
    m.add_function(wrap_pyfunction!(solve_power_exp, m)?)?;
    m.add_function(wrap_pyfunction!(power_exp_asymptote, m)?)?;
    m.add_function(wrap_pyfunction!(m_opt_exp, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_mse, m)?)?;
    m.add_function(wrap_pyfunction!(rate_regression, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_csv, m)?)?;
    m.add_function(wrap_pyfunction!(experiment_summary_json, m)?)?;
    m.add_function(wrap_pyfunction!(mse_vs_analytic, m)?)?;
    Ok(())
}
