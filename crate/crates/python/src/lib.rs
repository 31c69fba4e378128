//! Python module `mdep`: fitting, inference, tests and simulations over
//! plain lists of floats.

use std::str::FromStr;

use mdep_core::estimator::{tsls_robust, with_intercept};
use mdep_core::inference;
use mdep_core::simlab::{self, DgpId, DgpSpec, Estimator, SimOptions};
use mdep_core::{dcov, mdep_fit, rng, Dataset, Family, FitOptions, MdepError, ModelSpec};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(mdep, MDepError, PyException);

fn to_py(e: MdepError) -> PyErr {
    MDepError::new_err(e.to_string())
}

/// Rows of equal length into an `n × k` matrix.
fn matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let k = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn dataset(y: Vec<f64>, x: &[Vec<f64>], z: Option<&[Vec<f64>]>) -> PyResult<Dataset> {
    let x = matrix(x, "x")?;
    let z = match z {
        Some(z) => matrix(z, "z")?,
        None => x.clone(),
    };
    Dataset::new(y, x, z).map_err(to_py)
}

fn family(name: &str) -> PyResult<Family> {
    Family::from_str(name).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Result of [`fit`].
#[pyclass(frozen, get_all, module = "mdep")]
pub struct Fit {
    theta: Vec<f64>,
    intercept: f64,
    objective: f64,
    converged: bool,
    evals: usize,
    starts: usize,
}

#[pymethods]
impl Fit {
    fn __repr__(&self) -> String {
        format!(
            "Fit(theta={:?}, intercept={}, objective={:e}, converged={})",
            self.theta, self.intercept, self.objective, self.converged
        )
    }
}

/// Squared distance covariance `V²_n(u, z)`.
#[pyfunction]
fn dcov_sq(u: Vec<f64>, z: Vec<Vec<f64>>) -> PyResult<f64> {
    let zc = dcov::v_center(&dcov::pairwise_distances(&matrix(&z, "z")?).map_err(to_py)?);
    dcov::dcov_sq(&u, &zc).map_err(to_py)
}

/// Partial distance covariance `pdC_n(x2, z2; x1)`.
#[pyfunction]
fn pdcov(x2: Vec<f64>, z2: Vec<Vec<f64>>, x1: Vec<Vec<f64>>) -> PyResult<f64> {
    dcov::pdcov(&x2, &matrix(&z2, "z2")?, &matrix(&x1, "x1")?).map_err(to_py)
}

/// Minimum-dependence fit of `y` on rows `x` with instruments `z`
/// (default: `x`).
#[pyfunction]
#[pyo3(signature = (y, x, z=None, family="linear", restarts=5, seed=0, max_iter=2000))]
fn fit(
    py: Python<'_>,
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    z: Option<Vec<Vec<f64>>>,
    family: &str,
    restarts: usize,
    seed: u64,
    max_iter: usize,
) -> PyResult<Fit> {
    let data = dataset(y, &x, z.as_deref())?;
    let spec = ModelSpec::new(self::family(family)?, data.x().ncols());
    let opts = FitOptions {
        restarts,
        seed,
        max_iter,
        ..FitOptions::default()
    };
    let f = py.detach(|| mdep_fit(&spec, &data, &opts)).map_err(to_py)?;
    Ok(Fit {
        objective: f.objective_value,
        converged: f.converged,
        evals: f.evals,
        starts: f.starts.len(),
        intercept: f.intercept_hat,
        theta: f.theta_hat,
    })
}

/// Sandwich covariance of `theta` with the Hall bandwidth; returns a dict
/// with `sigma`, `std_errors`, `bandwidth`.
#[pyfunction]
#[pyo3(signature = (y, x, theta, z=None, family="linear", alpha=0.05))]
fn covariance<'py>(
    py: Python<'py>,
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    theta: Vec<f64>,
    z: Option<Vec<Vec<f64>>>,
    family: &str,
    alpha: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let data = dataset(y, &x, z.as_deref())?;
    let spec = ModelSpec::new(self::family(family)?, data.x().ncols());
    let c = py
        .detach(|| inference::fit_covariance(&spec, &data, &theta, alpha))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("sigma", rows_of(&c.sigma))?;
    d.set_item("std_errors", c.std_errors)?;
    d.set_item("bandwidth", c.bandwidth)?;
    Ok(d)
}

/// Pairs-bootstrap standard errors of the fitted `theta`.
#[pyfunction]
#[pyo3(signature = (y, x, theta, z=None, family="linear", b=199, seed=0))]
fn bootstrap_se(
    py: Python<'_>,
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    theta: Vec<f64>,
    z: Option<Vec<Vec<f64>>>,
    family: &str,
    b: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let data = dataset(y, &x, z.as_deref())?;
    let spec = ModelSpec::new(self::family(family)?, data.x().ncols());
    py.detach(|| {
        let boot = inference::pairs_bootstrap(&spec, &data, &theta, &FitOptions::default(), b, seed)?;
        (0..theta.len())
            .map(|k| boot.intervals(k, inference::DEFAULT_ALPHA).map(|iv| iv.std_error))
            .collect::<mdep_core::Result<Vec<f64>>>()
    })
    .map_err(to_py)
}

/// OLS with an intercept: `(coefficients, robust standard errors)`.
#[pyfunction]
fn ols(y: Vec<f64>, x: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let xc = with_intercept(&matrix(&x, "x")?);
    let f = tsls_robust(&y, &xc, &xc).map_err(to_py)?;
    Ok((f.coefficients, f.std_errors))
}

/// 2SLS with intercepts in both stages: `(coefficients, robust standard errors)`.
#[pyfunction]
fn tsls(y: Vec<f64>, x: Vec<Vec<f64>>, z: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let f = tsls_robust(&y, &with_intercept(&matrix(&x, "x")?), &with_intercept(&matrix(&z, "z")?))
        .map_err(to_py)?;
    Ok((f.coefficients, f.std_errors))
}

/// Wild-bootstrap specification test at `theta`: `(T_n, p-value)`.
#[pyfunction]
#[pyo3(signature = (y, x, theta, z=None, family="linear", b=199, seed=0))]
fn spec_test(
    py: Python<'_>,
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    theta: Vec<f64>,
    z: Option<Vec<Vec<f64>>>,
    family: &str,
    b: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let data = dataset(y, &x, z.as_deref())?;
    let spec = ModelSpec::new(self::family(family)?, data.x().ncols());
    let t = py
        .detach(|| inference::wild_spec_test(&spec, &data, &theta, &FitOptions::default(), b, seed))
        .map_err(to_py)?;
    Ok((t.stat0, t.p_value.unwrap_or(f64::NAN)))
}

/// Wild-bootstrap relevance test of `x2` on `z2` given `controls`:
/// `(pdC_n, p-value)`.
#[pyfunction]
#[pyo3(signature = (x2, z2, controls, b=199, seed=0, nonlinear=false))]
fn relevance_test(
    py: Python<'_>,
    x2: Vec<f64>,
    z2: Vec<Vec<f64>>,
    controls: Vec<Vec<f64>>,
    b: usize,
    seed: u64,
    nonlinear: bool,
) -> PyResult<(f64, f64)> {
    let z2 = matrix(&z2, "z2")?;
    let controls = matrix(&controls, "controls")?;
    let t = py
        .detach(|| inference::pdcov_relevance_test(&x2, &z2, &controls, b, seed, nonlinear))
        .map_err(to_py)?;
    Ok((t.stat0, t.p_value.unwrap_or(f64::NAN)))
}

/// One draw of a simulation design: `(y, x, z)`.
#[pyfunction]
fn generate(spec: &str, n: usize, seed: u64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let id = DgpId::from_str(spec).map_err(to_py)?;
    let draw = simlab::dgp_generate(&DgpSpec::new(id, n).map_err(to_py)?, &mut rng::stream_rng(seed, 0))
        .map_err(to_py)?;
    let d = draw.data;
    Ok((d.y().to_vec(), rows_of(d.x()), rows_of(d.z())))
}

/// Monte Carlo metrics keyed by `(estimator, coefficient)` with values
/// `(mean_bias, mad, rmse)` on the raw scale.
#[pyfunction]
#[pyo3(signature = (spec, n, reps, seed, estimators=None, restarts=5))]
fn simulate<'py>(
    py: Python<'py>,
    spec: &str,
    n: usize,
    reps: usize,
    seed: u64,
    estimators: Option<Vec<String>>,
    restarts: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let id = DgpId::from_str(spec).map_err(to_py)?;
    let dgp = DgpSpec::new(id, n).map_err(to_py)?;
    let estimators: Vec<Estimator> = match estimators {
        Some(names) => names
            .iter()
            .map(|s| Estimator::from_str(s))
            .collect::<Result<_, _>>()
            .map_err(to_py)?,
        None => Estimator::defaults_for(id),
    };
    let opts = SimOptions {
        fit: FitOptions {
            restarts,
            ..FitOptions::default()
        },
        workers: 0,
    };
    let res = py
        .detach(|| simlab::run_replications(&dgp, &estimators, reps, seed, &opts))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    for c in &res.aggregates {
        if let Some(m) = c.metrics {
            d.set_item((c.estimator.name(), c.coefficient), (m.mean_bias, m.mad, m.rmse))?;
        }
    }
    Ok(d)
}

#[pymodule]
fn mdep(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MDepError", m.py().get_type::<MDepError>())?;
    m.add_class::<Fit>()?;
    m.add_function(wrap_pyfunction!(dcov_sq, m)?)?;
    m.add_function(wrap_pyfunction!(pdcov, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(covariance, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_se, m)?)?;
    m.add_function(wrap_pyfunction!(ols, m)?)?;
    m.add_function(wrap_pyfunction!(tsls, m)?)?;
    m.add_function(wrap_pyfunction!(spec_test, m)?)?;
    m.add_function(wrap_pyfunction!(relevance_test, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
