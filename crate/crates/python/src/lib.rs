//! Python bindings: `import pyewc`.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ewc::clustering::{kmeans_l2, kmeans_loss_guided, KMeansConfig};
use ewc::harness::{self, ExperimentConfig};
use ewc::hedge::{self, HedgeState};
use ewc::offline::{self, SeparatorFitConfig};
use ewc::{EwcError, OptionIndex, Orientation, TravelContext, UserHistory};

fn to_py(err: EwcError) -> PyErr {
    match err {
        EwcError::Io { .. } => PyOSError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn option(choice: u8) -> PyResult<OptionIndex> {
    match choice {
        1 => Ok(OptionIndex::Standard),
        2 => Ok(OptionIndex::Eco),
        _ => Err(PyValueError::new_err(format!("choice must be 1 or 2, got {choice}"))),
    }
}

fn context(tau: f64, e: f64) -> PyResult<TravelContext> {
    TravelContext::new(tau, e).map_err(to_py)
}

/// `(contexts, choices)` as passed from Python.
type RawHistory = (Vec<(f64, f64)>, Vec<u8>);

fn history(contexts: Vec<(f64, f64)>, choices: Vec<u8>) -> PyResult<UserHistory> {
    let contexts = contexts
        .into_iter()
        .map(|(t, e)| context(t, e))
        .collect::<PyResult<Vec<_>>>()?;
    let choices = choices.into_iter().map(option).collect::<PyResult<Vec<_>>>()?;
    UserHistory::new(contexts, choices).map_err(to_py)
}

/// Preference parameters `(b, s, o)` of a linear decision boundary.
#[pyclass(name = "PreferenceParams", module = "pyewc", from_py_object)]
#[derive(Clone, Copy)]
struct PyParams {
    inner: ewc::PreferenceParams,
}

#[pymethods]
impl PyParams {
    #[new]
    fn new(b: f64, s: f64, o: i8) -> PyResult<Self> {
        let orientation = match o {
            1 => Orientation::Positive,
            -1 => Orientation::Negative,
            _ => return Err(PyValueError::new_err("orientation must be +1 or -1")),
        };
        let inner = ewc::PreferenceParams::new(b, s, orientation).map_err(to_py)?;
        Ok(PyParams { inner })
    }

    #[getter]
    fn b(&self) -> f64 {
        self.inner.bias
    }

    #[getter]
    fn s(&self) -> f64 {
        self.inner.slope
    }

    #[getter]
    fn o(&self) -> i8 {
        self.inner.orientation.as_f64() as i8
    }

    fn margin(&self, tau: f64, e: f64) -> PyResult<f64> {
        Ok(self.inner.margin(&context(tau, e)?))
    }

    /// Recommended option (1 or 2) for the context.
    fn predict(&self, tau: f64, e: f64) -> PyResult<u8> {
        Ok(ewc::predict_choice(&self.inner, &context(tau, e)?).as_u8())
    }

    fn __repr__(&self) -> String {
        format!("PreferenceParams(b={}, s={}, o={})", self.b(), self.s(), self.o())
    }
}

/// Hedge over `k` experts with its own seeded sampler.
#[pyclass(name = "Hedge", module = "pyewc")]
struct PyHedge {
    state: HedgeState,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyHedge {
    #[new]
    #[pyo3(signature = (k, eta=None, horizon=None, seed=0))]
    fn new(k: usize, eta: Option<f64>, horizon: Option<usize>, seed: u64) -> PyResult<Self> {
        let eta = match (eta, horizon) {
            (Some(eta), _) => eta,
            (None, Some(t)) => hedge::default_learning_rate(k, t),
            (None, None) => return Err(PyValueError::new_err("give eta or horizon")),
        };
        Ok(PyHedge {
            state: HedgeState::init_uniform(k, eta).map_err(to_py)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.state.probs().to_vec()
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.state.eta()
    }

    fn select_expert(&mut self) -> usize {
        self.state.select_expert(&mut self.rng)
    }

    fn expected_loss(&self, losses: Vec<f64>) -> f64 {
        self.state.expected_loss(&losses)
    }

    fn update(&mut self, losses: Vec<f64>) -> PyResult<()> {
        self.state.update(&losses).map_err(to_py)
    }
}

#[pyfunction]
fn predict_choice(params: PyParams, tau: f64, e: f64) -> PyResult<u8> {
    params.predict(tau, e)
}

#[pyfunction]
fn choice_loss(predicted: u8, actual: u8) -> PyResult<u8> {
    Ok(ewc::choice_loss(option(predicted)?, option(actual)?).value())
}

#[pyfunction]
fn default_learning_rate(k: usize, horizon: usize) -> f64 {
    hedge::default_learning_rate(k, horizon)
}

/// Fits one user's boundary; returns `(params, degenerate)`.
#[pyfunction]
#[pyo3(signature = (contexts, choices, seed=0, iterations=10_000, regularization=1e-3))]
fn fit_user_separator(
    contexts: Vec<(f64, f64)>,
    choices: Vec<u8>,
    seed: u64,
    iterations: usize,
    regularization: f64,
) -> PyResult<(PyParams, bool)> {
    let cfg = SeparatorFitConfig {
        regularization,
        iterations,
        seed,
    };
    let fit = offline::fit_user_separator(&history(contexts, choices)?, &cfg).map_err(to_py)?;
    Ok((PyParams { inner: fit.params }, fit.degenerate))
}

/// K-Means over fitted parameters; returns `(centroids, labels)`.
/// With `histories` the loss-guided distance is used, otherwise L2.
#[pyfunction]
#[pyo3(signature = (params, k, histories=None, seed=0, max_iters=100))]
fn kmeans(
    params: Vec<PyParams>,
    k: usize,
    histories: Option<Vec<RawHistory>>,
    seed: u64,
    max_iters: usize,
) -> PyResult<(Vec<PyParams>, Vec<usize>)> {
    let params: Vec<_> = params.into_iter().map(|p| p.inner).collect();
    let cfg = KMeansConfig { k, seed, max_iters };
    let result = match histories {
        Some(h) => {
            let h = h
                .into_iter()
                .map(|(c, y)| history(c, y))
                .collect::<PyResult<Vec<_>>>()?;
            kmeans_loss_guided(&params, &h, &cfg)
        }
        None => kmeans_l2(&params, &cfg),
    }
    .map_err(to_py)?;
    let centroids = result
        .centroids
        .as_slice()
        .iter()
        .map(|&inner| PyParams { inner })
        .collect();
    Ok((centroids, result.assignment.labels().to_vec()))
}

#[pyfunction]
fn theoretical_bound(n: usize, t: usize, k: usize, l_hat: f64) -> PyResult<f64> {
    harness::theoretical_bound(n, t, k, l_hat).map(|b| b.total).map_err(to_py)
}

fn parse_config(config_json: Option<&str>) -> PyResult<ExperimentConfig> {
    match config_json {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string())),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Runs an experiment from a JSON config (same keys as the CLI config file)
/// and returns the report as JSON. With `out`, the CSV/SVG files are written too.
#[pyfunction]
#[pyo3(signature = (config_json=None, out=None))]
fn run_experiment(py: Python<'_>, config_json: Option<&str>, out: Option<std::path::PathBuf>) -> PyResult<String> {
    let cfg = parse_config(config_json)?;
    let report = py
        .detach(|| -> ewc::Result<_> {
            let report = harness::run_experiment(&cfg)?;
            if let Some(dir) = &out {
                harness::export_report(&report, &cfg, dir)?;
            }
            Ok(report)
        })
        .map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Crossover summary (JSON) for a report produced by `run_experiment`.
#[pyfunction]
#[pyo3(signature = (report_json, delta=0.1))]
fn crossover_analysis(report_json: &str, delta: f64) -> PyResult<String> {
    let report: harness::RegretReport =
        serde_json::from_str(report_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let summary = harness::crossover_analysis(&report, delta).map_err(to_py)?;
    serde_json::to_string(&summary).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn pyewc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyHedge>()?;
    m.add_function(wrap_pyfunction!(predict_choice, m)?)?;
    m.add_function(wrap_pyfunction!(choice_loss, m)?)?;
    m.add_function(wrap_pyfunction!(default_learning_rate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_user_separator, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(theoretical_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(crossover_analysis, m)?)?;
    Ok(())
}
