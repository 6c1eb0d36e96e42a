//! Python bindings: simulation, the two-step recommender, the BER harness and
//! the closed-form quantities.

use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::localpop::channel::{self, Seed};
use ::localpop::filter::{self, TiePolicy};
use ::localpop::harness::{self, TrialSpec};
use ::localpop::model::{ModelParams, Observation};
use ::localpop::{theory, Error};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::IndexOutOfRange { .. } => PyIndexError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn tie_policy(tie: &str) -> PyResult<TiePolicy> {
    tie.parse().map_err(to_py)
}

fn params(n: usize, k: usize, r: Option<usize>, p: f64, epsilon: f64) -> PyResult<ModelParams> {
    match r {
        Some(r) => ModelParams::new(n, k, r, p, epsilon),
        None => ModelParams::from_cluster_size(n, k, p, epsilon),
    }
    .map_err(to_py)
}

/// Draws one instance. Returns `(truth, rows)`: the 0/1 matrix as nested
/// lists and the observation as strings over `0`, `1` and `*`.
#[pyfunction]
#[pyo3(signature = (n, k, p, epsilon, r=None, seed=0))]
fn simulate(
    n: usize,
    k: usize,
    p: f64,
    epsilon: f64,
    r: Option<usize>,
    seed: u64,
) -> PyResult<(Vec<Vec<bool>>, Vec<String>)> {
    let params = params(n, k, r, p, epsilon)?;
    let (truth, obs) = channel::generate_instance(&params, Seed::new(seed, 0));
    let rows = (0..obs.n_rows()).map(|i| obs.row_string(i)).collect();
    Ok((truth.materialize(), rows))
}

/// Runs the recommender for `target` on rows written over `0`, `1`, `*`.
#[pyfunction]
#[pyo3(signature = (rows, target, t, tie="lowest"))]
fn recommend<'py>(
    py: Python<'py>,
    rows: Vec<String>,
    target: usize,
    t: usize,
    tie: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let obs = Observation::parse_rows(&rows).map_err(to_py)?;
    let trace = filter::recommend(&obs, target, t, tie_policy(tie)?).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("column", trace.chosen_column)?;
    out.set_item("top", trace.top_set)?;
    out.set_item("similarities", trace.similarities)?;
    out.set_item("ones", trace.ones_count)?;
    out.set_item("zeros", trace.zeros_count)?;
    out.set_item("ties", trace.argmax_columns)?;
    Ok(out)
}

/// Monte Carlo BER of the recommendation for row 0 with a Wilson interval.
#[pyfunction]
#[pyo3(signature = (n, k, p, epsilon, t, trials, r=None, seed=0, tie="lowest", confidence=0.99, threads=0))]
#[allow(clippy::too_many_arguments)]
fn estimate_ber<'py>(
    py: Python<'py>,
    n: usize,
    k: usize,
    p: f64,
    epsilon: f64,
    t: usize,
    trials: u64,
    r: Option<usize>,
    seed: u64,
    tie: &str,
    confidence: f64,
    threads: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let params = params(n, k, r, p, epsilon)?;
    let spec = TrialSpec::new(params, t, trials, Seed::new(seed, 0), tie_policy(tie)?);
    let summary = py
        .detach(|| harness::run_trials(&spec, threads))
        .map_err(to_py)?;
    let est = summary.estimate(confidence).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("ber", est.ber)?;
    out.set_item("ci_low", est.ci_low)?;
    out.set_item("ci_high", est.ci_high)?;
    out.set_item("trials", est.trials)?;
    out.set_item("errors", est.errors)?;
    out.set_item("skipped", est.skipped)?;
    out.set_item("purity_mean", summary.purity_mean())?;
    out.set_item("all_good", summary.all_good_fraction())?;
    Ok(out)
}

/// Exact BER by enumeration, averaged over block values (`n <= 3`).
#[pyfunction]
#[pyo3(signature = (n, k, p, epsilon, t=1, r=None))]
fn exact_ber(n: usize, k: usize, p: f64, epsilon: f64, t: usize, r: Option<usize>) -> PyResult<f64> {
    let params = params(n, k, r, p, epsilon)?;
    harness::exact_ber_averaged(&params, t)
        .map(|e| e.value)
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (errors, trials, confidence=0.99))]
fn wilson_interval(errors: u64, trials: u64, confidence: f64) -> PyResult<(f64, f64)> {
    harness::wilson_interval(errors, trials, confidence).map_err(to_py)
}

#[pyfunction]
fn lower_bound(p: f64, gamma: f64) -> PyResult<f64> {
    theory::theorem1_lower_bound(p, gamma).map_err(to_py)
}

#[pyfunction]
fn posterior_error(ones: u64, zeros: u64, p: f64) -> PyResult<f64> {
    theory::posterior_error(ones, zeros, p).map_err(to_py)
}

#[pyfunction]
fn separation_delta(epsilon: f64, p: f64) -> PyResult<f64> {
    theory::separation_delta(epsilon, p).map_err(to_py)
}

/// `(p1, p2)` overlap bounds; values may exceed 1.
#[pyfunction]
fn chernoff(n: u64, k: u64, r: u64, epsilon: f64, p: f64, delta: f64) -> PyResult<(f64, f64)> {
    let p1 = theory::chernoff_good(n, k, epsilon, p, delta).map_err(to_py)?;
    let p2 = theory::chernoff_bad(n, k, r, epsilon, delta).map_err(to_py)?;
    Ok((p1.value, p2.value))
}

#[pyfunction]
fn binomial_tail(n: u64, p: f64, threshold: u64) -> PyResult<f64> {
    theory::binomial_tail(n, p, threshold).map_err(to_py)
}

#[pymodule]
fn localpop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(recommend, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_ber, m)?)?;
    m.add_function(wrap_pyfunction!(exact_ber, m)?)?;
    m.add_function(wrap_pyfunction!(wilson_interval, m)?)?;
    m.add_function(wrap_pyfunction!(lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_error, m)?)?;
    m.add_function(wrap_pyfunction!(separation_delta, m)?)?;
    m.add_function(wrap_pyfunction!(chernoff, m)?)?;
    m.add_function(wrap_pyfunction!(binomial_tail, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
