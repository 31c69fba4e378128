//! Monte Carlo harness: seeded replications of the simulation designs,
//! bias/dispersion metrics, coverage studies and test size/power runs.

mod dgp;

pub use dgp::{
    cauchy, chi_square_innovation, correlated_pair, dgp_generate, projection_residuals,
    relevance_generate, sample_sd, squash_to_interval, uniform_sym, Comparator, DgpId, DgpSpec,
    Draw, RelevanceDraw, RelevanceTransform, COVARIATE_CORRELATION, UPPER_QUARTILE,
};

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dcov;
use crate::error::{MdepError, Result};
use crate::estimator::{mdep_fit_prepared, ols_fit, tsls_fit, with_intercept, FitOptions};
use crate::inference::{
    covariance, pairs_bootstrap, pdcov_relevance_test, wild_spec_test, CoefficientIntervals,
};
use crate::models::{BoundModel, Dataset};
use crate::rng::{child_seed, stream_rng};

/// Cells whose ×100 value exceeds this in absolute value are masked in tables.
pub const MASK_THRESHOLD: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    MDep,
    Ols,
    Tsls,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::MDep => "MDep",
            Estimator::Ols => "OLS",
            Estimator::Tsls => "2SLS",
        }
    }

    /// MDep plus the design's comparator.
    pub fn defaults_for(id: DgpId) -> Vec<Estimator> {
        let mut v = vec![Estimator::MDep];
        match id.comparator() {
            Some(Comparator::Ols) => v.push(Estimator::Ols),
            Some(Comparator::Tsls) => v.push(Estimator::Tsls),
            None => {}
        }
        v
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = MdepError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mdep" => Ok(Estimator::MDep),
            "ols" => Ok(Estimator::Ols),
            "2sls" | "tsls" | "iv" => Ok(Estimator::Tsls),
            other => Err(MdepError::InvalidArgument(format!(
                "unknown estimator `{other}` (expected mdep, ols or 2sls)"
            ))),
        }
    }
}

/// Mean bias, median absolute deviation from the truth, and RMSE, on the
/// raw scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean_bias: f64,
    pub mad: f64,
    pub rmse: f64,
    pub count: usize,
}

impl Metrics {
    /// `(MB, MAD, RMSE)` multiplied by 100.
    pub fn scaled(&self) -> [f64; 3] {
        [100.0 * self.mean_bias, 100.0 * self.mad, 100.0 * self.rmse]
    }

    /// [`Metrics::scaled`] with entries beyond ±500 replaced by `None`.
    pub fn masked(&self) -> [Option<f64>; 3] {
        self.scaled().map(mask)
    }
}

pub fn mask(scaled: f64) -> Option<f64> {
    (scaled.abs() <= MASK_THRESHOLD).then_some(scaled)
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    }
}

/// MB = mean(θ̂ − θ₀), MAD = median|θ̂ − θ₀|, RMSE = sqrt(mean((θ̂ − θ₀)²)).
pub fn metrics(estimates: &[f64], truth: f64) -> Result<Metrics> {
    if estimates.is_empty() {
        return Err(MdepError::InvalidArgument("metrics need at least one estimate".into()));
    }
    if let Some(row) = estimates.iter().position(|v| !v.is_finite()) {
        return Err(MdepError::NonFinite { what: "estimate", row });
    }
    let m = estimates.len() as f64;
    let errors: Vec<f64> = estimates.iter().map(|e| e - truth).collect();
    let mean_bias = errors.iter().sum::<f64>() / m;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / m).sqrt();
    let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    abs.sort_by(f64::total_cmp);
    Ok(Metrics {
        mean_bias,
        mad: median_sorted(&abs),
        rmse,
        count: estimates.len(),
    })
}

/// Runs `work` on a dedicated pool of `workers` threads, or on the current
/// pool when `workers` is zero.
pub fn with_workers<T: Send>(workers: usize, work: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(work());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| MdepError::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(work))
}

/// Per-replication estimates; `None` marks a failed estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub estimates: Vec<Option<Vec<f64>>>,
    /// MDep convergence flag (true for the closed-form estimators).
    pub converged: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub estimator: Estimator,
    pub coefficient: usize,
    pub metrics: Option<Metrics>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub dgp: DgpId,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub truth: Vec<f64>,
    pub per_rep: Vec<RepRecord>,
    pub aggregates: Vec<CellMetrics>,
    /// Replications in which at least one estimator failed.
    pub failures: usize,
    pub unconverged: usize,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl SimulationResult {
    pub fn cell(&self, estimator: Estimator, coefficient: usize) -> Option<&CellMetrics> {
        self.aggregates
            .iter()
            .find(|c| c.estimator == estimator && c.coefficient == coefficient)
    }

    /// Metrics recomputed from `per_rep`.
    pub fn aggregate(estimators: &[Estimator], truth: &[f64], per_rep: &[RepRecord]) -> Vec<CellMetrics> {
        let mut cells = Vec::new();
        for (e, &estimator) in estimators.iter().enumerate() {
            for (k, &t) in truth.iter().enumerate() {
                let values: Vec<f64> = per_rep
                    .iter()
                    .filter_map(|r| r.estimates[e].as_ref().map(|v| v[k]))
                    .filter(|v| v.is_finite())
                    .collect();
                let failures = per_rep.len() - values.len();
                cells.push(CellMetrics {
                    estimator,
                    coefficient: k,
                    metrics: metrics(&values, t).ok(),
                    failures,
                });
            }
        }
        cells
    }
}

/// Simulation settings shared by the runners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub fit: FitOptions,
    /// Worker threads; zero uses the ambient pool.
    pub workers: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            workers: 0,
        }
    }
}

fn slopes(coefficients: nalgebra::DVector<f64>) -> Vec<f64> {
    coefficients.iter().skip(1).copied().collect()
}

fn run_estimator(
    estimator: Estimator,
    spec: &DgpSpec,
    data: &Dataset,
    fit: &FitOptions,
) -> (Option<Vec<f64>>, bool) {
    match estimator {
        Estimator::MDep => {
            let Ok(model) = BoundModel::new(spec.model_spec(), data) else {
                return (None, false);
            };
            let Ok(zd) = dcov::pairwise_distances(data.z()) else {
                return (None, false);
            };
            let zc = dcov::v_center(&zd);
            match mdep_fit_prepared(&model, &zc, fit) {
                Ok(f) => (Some(f.theta_hat), f.converged),
                Err(_) => (None, false),
            }
        }
        Estimator::Ols => (
            ols_fit(data.y(), &with_intercept(data.x())).ok().map(slopes),
            true,
        ),
        Estimator::Tsls => (
            tsls_fit(data.y(), &with_intercept(data.x()), &with_intercept(data.z()))
                .ok()
                .map(slopes),
            true,
        ),
    }
}

/// Replication `r` draws its sample from stream `(seed, r)` and seeds the
/// MDep restarts with a child of `(seed, r)`, so the output does not depend
/// on the worker count.
pub fn run_replications(
    spec: &DgpSpec,
    estimators: &[Estimator],
    reps: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<SimulationResult> {
    if reps == 0 {
        return Err(MdepError::InvalidArgument("reps must be at least 1".into()));
    }
    if estimators.is_empty() {
        return Err(MdepError::InvalidArgument("no estimator requested".into()));
    }
    let start = Instant::now();
    let per_rep: Vec<RepRecord> = with_workers(opts.workers, || {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(seed, r as u64);
                let draw = dgp_generate(spec, &mut rng);
                let fit = FitOptions {
                    seed: child_seed(seed, r as u64),
                    ..opts.fit.clone()
                };
                let mut estimates = Vec::with_capacity(estimators.len());
                let mut converged = Vec::with_capacity(estimators.len());
                for &e in estimators {
                    let (est, conv) = match &draw {
                        Ok(d) => run_estimator(e, spec, &d.data, &fit),
                        Err(_) => (None, false),
                    };
                    estimates.push(est);
                    converged.push(conv);
                }
                RepRecord {
                    rep: r,
                    estimates,
                    converged,
                }
            })
            .collect()
    })?;
    let truth = spec.true_theta();
    let aggregates = SimulationResult::aggregate(estimators, &truth, &per_rep);
    let failures = per_rep
        .iter()
        .filter(|r| r.estimates.iter().any(|e| e.is_none()))
        .count();
    let unconverged = per_rep
        .iter()
        .filter(|r| r.estimates.iter().zip(&r.converged).any(|(e, c)| e.is_some() && !c))
        .count();
    Ok(SimulationResult {
        dgp: spec.id,
        n: spec.n,
        reps,
        seed,
        estimators: estimators.to_vec(),
        truth,
        per_rep,
        aggregates,
        failures,
        unconverged,
        wall_time: start.elapsed(),
    })
}

/// True when `truth` lies in the closed interval.
pub fn covers(interval: (f64, f64), truth: f64) -> bool {
    interval.0 <= truth && truth <= interval.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntervalMethod {
    Asymptotic,
    Percentile,
    Empirical,
    Normal,
}

impl IntervalMethod {
    pub const ALL: [IntervalMethod; 4] = [
        IntervalMethod::Asymptotic,
        IntervalMethod::Percentile,
        IntervalMethod::Empirical,
        IntervalMethod::Normal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IntervalMethod::Asymptotic => "Asymp.",
            IntervalMethod::Percentile => "B-%tile",
            IntervalMethod::Empirical => "B-Emp.",
            IntervalMethod::Normal => "B-Asymp.",
        }
    }
}

/// Intervals computed in one coverage replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub rep: usize,
    pub theta_hat: Option<Vec<f64>>,
    pub asymptotic: Option<Vec<(f64, f64)>>,
    pub bootstrap: Option<Vec<[(f64, f64); 3]>>,
    pub bootstrap_failures: usize,
}

impl CoverageRecord {
    pub fn interval(&self, method: IntervalMethod, k: usize) -> Option<(f64, f64)> {
        match method {
            IntervalMethod::Asymptotic => self.asymptotic.as_ref().map(|v| v[k]),
            IntervalMethod::Percentile => self.bootstrap.as_ref().map(|v| v[k][0]),
            IntervalMethod::Empirical => self.bootstrap.as_ref().map(|v| v[k][1]),
            IntervalMethod::Normal => self.bootstrap.as_ref().map(|v| v[k][2]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub method: IntervalMethod,
    pub coefficient: usize,
    pub covered: usize,
    /// Replications where the interval could be computed.
    pub available: usize,
}

impl CoverageCell {
    /// Coverage in percent over the available replications.
    pub fn percent(&self) -> Option<f64> {
        (self.available > 0).then(|| 100.0 * self.covered as f64 / self.available as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub dgp: DgpId,
    pub n: usize,
    pub reps: usize,
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub truth: Vec<f64>,
    pub records: Vec<CoverageRecord>,
    pub cells: Vec<CoverageCell>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl CoverageResult {
    pub fn cell(&self, method: IntervalMethod, coefficient: usize) -> Option<&CoverageCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.coefficient == coefficient)
    }

    pub fn tabulate(truth: &[f64], records: &[CoverageRecord]) -> Vec<CoverageCell> {
        let mut cells = Vec::new();
        for (k, &t) in truth.iter().enumerate() {
            for method in IntervalMethod::ALL {
                let intervals: Vec<(f64, f64)> =
                    records.iter().filter_map(|r| r.interval(method, k)).collect();
                cells.push(CoverageCell {
                    method,
                    coefficient: k,
                    covered: intervals.iter().filter(|&&iv| covers(iv, t)).count(),
                    available: intervals.len(),
                });
            }
        }
        cells
    }
}

/// Coverage of level-`1 − alpha` intervals for the MDep coefficients.
///
/// Each replication fits MDep, forms the sandwich (Wald) interval with the
/// Hall bandwidth, and runs a pairs bootstrap with `b` replicates (stream
/// family `child_seed(seed, r)`). Replications where a method fails are
/// left out of that method's denominator.
pub fn coverage_experiment(
    spec: &DgpSpec,
    reps: usize,
    b: usize,
    alpha: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<CoverageResult> {
    if reps == 0 {
        return Err(MdepError::InvalidArgument("reps must be at least 1".into()));
    }
    crate::inference::normal_critical_value(alpha)?;
    let start = Instant::now();
    let model_spec = spec.model_spec();
    let records: Vec<CoverageRecord> = with_workers(opts.workers, || {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut record = CoverageRecord {
                    rep: r,
                    theta_hat: None,
                    asymptotic: None,
                    bootstrap: None,
                    bootstrap_failures: 0,
                };
                let mut rng = stream_rng(seed, r as u64);
                let Ok(draw) = dgp_generate(spec, &mut rng) else {
                    return record;
                };
                let rep_seed = child_seed(seed, r as u64);
                let fit_opts = FitOptions {
                    seed: rep_seed,
                    ..opts.fit.clone()
                };
                let Ok(model) = BoundModel::new(model_spec, &draw.data) else {
                    return record;
                };
                let Ok(zd) = dcov::pairwise_distances(draw.data.z()) else {
                    return record;
                };
                let zc = dcov::v_center(&zd);
                let Ok(fit) = mdep_fit_prepared(&model, &zc, &fit_opts) else {
                    return record;
                };
                if let Ok(cov) = covariance(&fit.theta_hat, &model_spec, &draw.data, &zc, alpha) {
                    record.asymptotic = cov.wald_intervals(&fit.theta_hat, alpha).ok();
                }
                if b >= 2 {
                    if let Ok(pb) = pairs_bootstrap(
                        &model_spec,
                        &draw.data,
                        &fit.theta_hat,
                        &fit_opts,
                        b,
                        child_seed(rep_seed, 1),
                    ) {
                        record.bootstrap_failures = pb.failures;
                        let ivs: Option<Vec<CoefficientIntervals>> = (0..fit.theta_hat.len())
                            .map(|k| pb.intervals(k, alpha).ok())
                            .collect();
                        record.bootstrap = ivs.map(|v| {
                            v.into_iter()
                                .map(|iv| [iv.percentile, iv.empirical, iv.normal])
                                .collect()
                        });
                    }
                }
                record.theta_hat = Some(fit.theta_hat);
                record
            })
            .collect()
    })?;
    let truth = spec.true_theta();
    let cells = CoverageResult::tabulate(&truth, &records);
    Ok(CoverageResult {
        dgp: spec.id,
        n: spec.n,
        reps,
        b,
        alpha,
        seed,
        truth,
        records,
        cells,
        wall_time: start.elapsed(),
    })
}

/// Rejection frequency of a bootstrap test over Monte Carlo replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub reps: usize,
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    /// One entry per replication; `None` when the test could not be run.
    pub p_values: Vec<Option<f64>>,
    pub rejections: usize,
    pub completed: usize,
}

impl RejectionSummary {
    fn from_p_values(p_values: Vec<Option<f64>>, b: usize, alpha: f64, seed: u64) -> Self {
        let completed = p_values.iter().flatten().count();
        let rejections = p_values.iter().flatten().filter(|&&p| p < alpha).count();
        Self {
            reps: p_values.len(),
            b,
            alpha,
            seed,
            p_values,
            rejections,
            completed,
        }
    }

    pub fn rate(&self) -> f64 {
        if self.completed == 0 {
            f64::NAN
        } else {
            self.rejections as f64 / self.completed as f64
        }
    }
}

/// Size or power of the wild-bootstrap relevance test in the first-stage
/// design `x2 = x1 + z2 + λ f(z2) + u`.
#[allow(clippy::too_many_arguments)]
pub fn relevance_experiment(
    n: usize,
    lambda: f64,
    transform: RelevanceTransform,
    nonlinear: bool,
    reps: usize,
    b: usize,
    alpha: f64,
    seed: u64,
    workers: usize,
) -> Result<RejectionSummary> {
    let p_values = with_workers(workers, || {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(seed, r as u64);
                let d = relevance_generate(n, lambda, transform, &mut rng);
                pdcov_relevance_test(&d.x2, &d.z2, &d.x1, b, child_seed(seed, r as u64), nonlinear)
                    .ok()
                    .and_then(|t| t.p_value)
            })
            .collect()
    })?;
    Ok(RejectionSummary::from_p_values(p_values, b, alpha, seed))
}

/// Size or power of the wild-bootstrap specification test on design `spec`.
pub fn spec_test_experiment(
    spec: &DgpSpec,
    reps: usize,
    b: usize,
    alpha: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<RejectionSummary> {
    let model_spec = spec.model_spec();
    let p_values = with_workers(opts.workers, || {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(seed, r as u64);
                let draw = dgp_generate(spec, &mut rng).ok()?;
                let rep_seed = child_seed(seed, r as u64);
                let fit_opts = FitOptions {
                    seed: rep_seed,
                    ..opts.fit.clone()
                };
                let fit = crate::estimator::mdep_fit(&model_spec, &draw.data, &fit_opts).ok()?;
                wild_spec_test(
                    &model_spec,
                    &draw.data,
                    &fit.theta_hat,
                    &fit_opts,
                    b,
                    child_seed(rep_seed, 2),
                )
                .ok()
                .and_then(|t| t.p_value)
            })
            .collect()
    })?;
    Ok(RejectionSummary::from_p_values(p_values, b, alpha, seed))
}
