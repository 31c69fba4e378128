//! The minimum-dependence estimator: the objective `V²_n(U(θ), Z)`, its
//! subgradient, multi-start Nelder–Mead minimisation, and least-squares
//! comparators.

mod comparators;
mod nelder_mead;

pub use comparators::{ols_fit, tsls_fit, tsls_robust, with_intercept, LeastSquaresFit, CONDITION_LIMIT};
pub use nelder_mead::{nelder_mead, NelderMeadOutcome};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dcov::{self, CenteredDistanceMatrix};
use crate::error::{MdepError, Result};
use crate::models::{self, BoundModel, Dataset, Family, ModelSpec};
use crate::rng;

/// How the first Nelder–Mead start is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum InitStrategy {
    /// OLS when the instruments are the covariates, 2SLS otherwise, for
    /// families linear in the index; the zero vector for exponential families.
    #[default]
    Auto,
    Ols,
    Tsls,
    User(Vec<f64>),
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    pub simplex_tol: f64,
    pub restarts: usize,
    pub init: InitStrategy,
    pub perturb_scale: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 2_000,
            simplex_tol: 1e-8,
            restarts: 5,
            init: InitStrategy::Auto,
            perturb_scale: 0.5,
            seed: 0,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(MdepError::InvalidArgument("restarts must be at least 1".into()));
        }
        if !(self.simplex_tol > 0.0) || !(self.perturb_scale >= 0.0) {
            return Err(MdepError::InvalidArgument(
                "tolerances must be positive and the perturbation scale non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Single start from `theta`, as used for bootstrap refits.
    pub fn refit_from(&self, theta: &[f64]) -> Self {
        Self {
            restarts: 1,
            init: InitStrategy::User(theta.to_vec()),
            ..self.clone()
        }
    }
}

/// One Nelder–Mead run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub start: Vec<f64>,
    pub start_objective: f64,
    pub terminal: Vec<f64>,
    pub terminal_objective: f64,
    pub converged: bool,
    pub evals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MDepFit {
    pub theta_hat: Vec<f64>,
    pub intercept_hat: f64,
    pub objective_value: f64,
    pub converged: bool,
    pub evals: usize,
    pub starts: Vec<StartRecord>,
    /// Index into `starts` of the winning run.
    pub best_start: usize,
    pub covariance: Option<DMatrix<f64>>,
    pub std_errors: Option<Vec<f64>>,
}

impl MDepFit {
    pub fn starting_points(&self) -> impl Iterator<Item = &[f64]> {
        self.starts.iter().map(|s| s.start.as_slice())
    }
}

/// `V²_n(U(θ), Z) = (1/n²) Σ_ij ž_ij |u_i(θ) − u_j(θ)|`, with `ž` built once
/// from the instruments.
pub fn mdep_objective(
    theta: &[f64],
    spec: &ModelSpec,
    data: &Dataset,
    zc: &CenteredDistanceMatrix,
) -> Result<f64> {
    let u = models::residuals(spec, theta, data)?;
    dcov::dcov_sq(&u, zc)
}

/// A subgradient of the objective,
/// `(1/n²) Σ_ij ž_ij (1 − 2·I(ũ_ij < 0)) (x^g_i − x^g_j)`.
///
/// Tied pairs (`ũ_ij = 0`) contribute nothing: the `(i, j)` and `(j, i)`
/// terms cancel. Away from ties this is the gradient.
pub fn mdep_subgradient(
    theta: &[f64],
    spec: &ModelSpec,
    data: &Dataset,
    zc: &CenteredDistanceMatrix,
) -> Result<Vec<f64>> {
    let model = BoundModel::new(*spec, data)?;
    let u = model.residuals(theta)?;
    let jac = model.jacobian(theta)?;
    let n = u.len();
    if zc.n() != n {
        return Err(MdepError::DimensionMismatch {
            expected: n,
            found: zc.n(),
        });
    }
    // Σ_{i≠j} ž_ij sgn(ũ_ij)(J_i − J_j) = 2 Σ_i (Σ_j ž_ij sgn(ũ_ij)) J_i
    let mut weight = vec![0.0; n];
    for i in 0..n {
        let row = zc.row(i);
        for j in (i + 1)..n {
            let diff = u[i] - u[j];
            if diff == 0.0 {
                continue;
            }
            let w = row[j] * diff.signum();
            weight[i] += w;
            weight[j] -= w;
        }
    }
    let p = spec.p_theta();
    let mut grad = vec![0.0; p];
    for (i, w) in weight.iter().enumerate() {
        for (g, x) in grad.iter_mut().zip(jac.row(i)) {
            *g += w * x;
        }
    }
    let scale = 2.0 / (n as f64 * n as f64);
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(grad)
}

fn check_fit_preconditions(spec: &ModelSpec, data: &Dataset) -> Result<()> {
    let p = spec.p_theta();
    if data.z().ncols() < p {
        return Err(MdepError::IdentificationOrder {
            instruments: data.z().ncols(),
            parameters: p,
        });
    }
    let required = 4.max(p + 2);
    if data.n() < required {
        return Err(MdepError::TooFewObservations {
            required,
            found: data.n(),
        });
    }
    Ok(())
}

/// `θ̂ = argmin_θ V²_n(U(θ), Z)`.
///
/// Nelder–Mead runs from the initial point and from `restarts − 1` Gaussian
/// perturbations of it (scale `perturb_scale · (1 + |θ_init,k|)`); restart
/// `r` draws from the random stream `(seed, r)`. The best terminal point
/// wins, ties going to the earliest start. A fit whose winning run exhausted
/// `max_iter` is returned with `converged = false`.
pub fn mdep_fit(spec: &ModelSpec, data: &Dataset, opts: &FitOptions) -> Result<MDepFit> {
    check_fit_preconditions(spec, data)?;
    let model = BoundModel::new(*spec, data)?;
    let zc = dcov::v_center(&dcov::pairwise_distances(data.z())?);
    mdep_fit_prepared(&model, &zc, opts)
}

/// [`mdep_fit`] with the model bound and `ž` built by the caller, so that
/// refits on data sharing the same instruments can reuse `ž`.
pub fn mdep_fit_prepared(
    model: &BoundModel<'_>,
    zc: &CenteredDistanceMatrix,
    opts: &FitOptions,
) -> Result<MDepFit> {
    opts.validate()?;
    check_fit_preconditions(model.spec(), model.data())?;
    let n = model.data().n();
    if zc.n() != n {
        return Err(MdepError::DimensionMismatch {
            expected: n,
            found: zc.n(),
        });
    }
    let p = model.spec().p_theta();
    let init = initial_point(model, &opts.init)?;

    let mut buffer = Vec::with_capacity(n);
    let mut objective = |theta: &[f64]| -> f64 {
        match model.residuals_into(theta, &mut buffer) {
            Ok(()) => dcov::weighted_abs_pair_sum(&buffer, zc),
            Err(_) => f64::INFINITY,
        }
    };

    let init_value = objective(&init);
    if !init_value.is_finite() {
        // surface the underlying error
        model.residuals(&init)?;
        return Err(MdepError::InvalidArgument(
            "objective is not finite at the initial point".into(),
        ));
    }

    let mut starts = Vec::with_capacity(opts.restarts);
    let mut total_evals = 0;
    for r in 0..opts.restarts {
        let start: Vec<f64> = if r == 0 {
            init.clone()
        } else {
            let mut rng = rng::stream_rng(opts.seed, r as u64);
            init.iter()
                .map(|&v| v + opts.perturb_scale * (1.0 + v.abs()) * rng::normal(&mut rng))
                .collect()
        };
        let start_objective = objective(&start);
        let steps: Vec<f64> = start.iter().map(|v| 0.1 * (1.0 + v.abs())).collect();
        let out = nelder_mead(&mut objective, &start, &steps, opts.max_iter, opts.simplex_tol);
        total_evals += out.evals + 1;
        starts.push(StartRecord {
            start,
            start_objective,
            terminal: out.x,
            terminal_objective: out.fx,
            converged: out.converged,
            evals: out.evals,
        });
    }

    let mut best = 0;
    for (k, s) in starts.iter().enumerate().skip(1) {
        if s.terminal_objective < starts[best].terminal_objective - 1e-14 {
            best = k;
        }
    }
    let winner = &starts[best];
    if !winner.terminal_objective.is_finite() {
        return Err(MdepError::InvalidArgument(
            "no start reached a finite objective value".into(),
        ));
    }
    let theta_hat = winner.terminal.clone();
    let intercept_hat = models::recovered_intercept(model.spec(), &theta_hat, model.data())?;
    debug_assert_eq!(theta_hat.len(), p);
    Ok(MDepFit {
        objective_value: winner.terminal_objective,
        converged: winner.converged,
        theta_hat,
        intercept_hat,
        evals: total_evals,
        best_start: best,
        starts,
        covariance: None,
        std_errors: None,
    })
}

fn slopes(coefficients: DVector<f64>) -> Vec<f64> {
    coefficients.iter().skip(1).copied().collect()
}

/// Least-squares starting values on the scale of `G⁻¹(y)`.
fn initial_point(model: &BoundModel<'_>, init: &InitStrategy) -> Result<Vec<f64>> {
    let data = model.data();
    let p = model.spec().p_theta();
    let family = model.spec().family();
    let linear_outcome = || -> Result<Vec<f64>> {
        if family.is_linear_index() {
            return Ok(model.transformed_outcome().to_vec());
        }
        // exponential families: regress log y when every outcome is positive
        data.y()
            .iter()
            .enumerate()
            .map(|(row, &y)| Family::LogLinear.transform_outcome(y, row))
            .collect()
    };
    let ols = || -> Result<Vec<f64>> {
        Ok(slopes(ols_fit(&linear_outcome()?, &with_intercept(data.x()))?))
    };
    let tsls = || -> Result<Vec<f64>> {
        Ok(slopes(tsls_fit(
            &linear_outcome()?,
            &with_intercept(data.x()),
            &with_intercept(data.z()),
        )?))
    };
    let point = match init {
        InitStrategy::Auto => {
            if family.is_linear_index() {
                if data.instruments_are_covariates() {
                    ols()?
                } else {
                    tsls().or_else(|_| ols())?
                }
            } else {
                vec![0.0; p]
            }
        }
        InitStrategy::Ols => ols()?,
        InitStrategy::Tsls => tsls()?,
        InitStrategy::User(theta) => {
            if theta.len() != p {
                return Err(MdepError::DimensionMismatch {
                    expected: p,
                    found: theta.len(),
                });
            }
            theta.clone()
        }
        InitStrategy::Zero => vec![0.0; p],
    };
    if let Some(row) = point.iter().position(|v| !v.is_finite()) {
        return Err(MdepError::NonFinite {
            what: "initial value",
            row,
        });
    }
    Ok(point)
}
