//! Plug-in sandwich covariance, the pairs bootstrap, and the wild-bootstrap
//! relevance and specification tests.

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::dcov::{self, CenteredDistanceMatrix, DistanceMatrix, PartialDcovContext};
use crate::error::{MdepError, Result};
use crate::estimator::{mdep_fit_prepared, ols_fit, with_intercept, FitOptions};
use crate::models::{BoundModel, Dataset, JacobianMatrix, ModelSpec};
use crate::rng;

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Smallest replicate count accepted by the wild-bootstrap tests.
pub const MIN_TEST_REPLICATES: usize = 99;

/// Largest fraction of failed refits tolerated by [`wild_spec_test`].
pub const MAX_FAILURE_SHARE: f64 = 0.10;

/// Condition-number guard applied to `Ȟ` before inversion.
pub const HESSIAN_CONDITION_LIMIT: f64 = 1e12;

/// Maximum number of bandwidth doublings tried when the band is empty.
pub const MAX_BANDWIDTH_DOUBLINGS: u32 = 3;

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(MdepError::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Two-sided standard-normal critical value `Φ⁻¹(1 − α/2)`.
pub fn normal_critical_value(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(standard_normal().inverse_cdf(1.0 - alpha / 2.0))
}

/// Hall–Sheather type bandwidth
/// `ĉ_n = n^{−1/3} (Φ⁻¹(1 − α/2))^{2/3} (1.5 φ(0)²)^{1/3}`.
pub fn bandwidth_hall(n: usize, alpha: f64) -> Result<f64> {
    if n < 2 {
        return Err(MdepError::TooFewObservations {
            required: 2,
            found: n,
        });
    }
    let q = normal_critical_value(alpha)?;
    let phi0 = standard_normal().pdf(0.0);
    Ok((n as f64).powf(-1.0 / 3.0) * q.powf(2.0 / 3.0) * (1.5 * phi0 * phi0).powf(1.0 / 3.0))
}

/// Uniform-kernel Hessian estimate together with the bandwidth actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianEstimate {
    pub matrix: DMatrix<f64>,
    pub bandwidth: f64,
    /// Ordered pairs `i ≠ j` with `|ũ_ij| ≤ bandwidth`.
    pub pairs_in_band: usize,
    pub doublings: u32,
    /// The band stayed empty after every doubling.
    pub degenerate: bool,
}

struct Pieces {
    u: Vec<f64>,
    jac: JacobianMatrix,
}

fn pieces(theta: &[f64], spec: &ModelSpec, data: &Dataset, zc: &CenteredDistanceMatrix) -> Result<Pieces> {
    let model = BoundModel::new(*spec, data)?;
    let u = model.residuals(theta)?;
    let jac = model.jacobian(theta)?;
    if zc.n() != u.len() {
        return Err(MdepError::DimensionMismatch {
            expected: u.len(),
            found: zc.n(),
        });
    }
    Ok(Pieces { u, jac })
}

fn diff_into(jac: &JacobianMatrix, i: usize, j: usize, out: &mut [f64]) {
    for ((o, a), b) in out.iter_mut().zip(jac.row(i)).zip(jac.row(j)) {
        *o = a - b;
    }
}

fn add_outer(acc: &mut [f64], p: usize, w: f64, a: &[f64], b: &[f64]) {
    for r in 0..p {
        let wa = w * a[r];
        if wa == 0.0 {
            continue;
        }
        let row = &mut acc[r * p..(r + 1) * p];
        for (c, v) in row.iter_mut().enumerate() {
            *v += wa * b[c];
        }
    }
}

fn hessian_with_band(p: &Pieces, zc: &CenteredDistanceMatrix, c: f64) -> (DMatrix<f64>, usize) {
    let n = p.u.len();
    let k = p.jac.p();
    let mut acc = vec![0.0; k * k];
    let mut d = vec![0.0; k];
    let mut count = 0;
    for i in 0..n {
        let row = zc.row(i);
        for j in (i + 1)..n {
            if (p.u[i] - p.u[j]).abs() <= c {
                count += 2;
                diff_into(&p.jac, i, j, &mut d);
                add_outer(&mut acc, k, 2.0 * row[j], &d, &d);
            }
        }
    }
    let nf = n as f64;
    let scale = 1.0 / (nf * nf * c);
    let m = DMatrix::from_fn(k, k, |r, s| acc[r * k + s] * scale);
    (symmetrize(&m), count)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `Ȟ_n = (1/(n² ĉ)) Σ_ij I(|ũ_ij| ≤ ĉ) ž_ij x̃_ij x̃_ij'` at a fixed bandwidth.
pub fn hessian_at_bandwidth(
    theta: &[f64],
    spec: &ModelSpec,
    data: &Dataset,
    zc: &CenteredDistanceMatrix,
    c_hat: f64,
) -> Result<DMatrix<f64>> {
    check_bandwidth(c_hat)?;
    let p = pieces(theta, spec, data, zc)?;
    Ok(hessian_with_band(&p, zc, c_hat).0)
}

fn check_bandwidth(c_hat: f64) -> Result<()> {
    if c_hat > 0.0 && c_hat.is_finite() {
        Ok(())
    } else {
        Err(MdepError::InvalidArgument(format!(
            "bandwidth must be positive and finite, got {c_hat}"
        )))
    }
}

/// [`hessian_at_bandwidth`], doubling the bandwidth up to three times when no
/// pair falls inside the band.
pub fn hessian_estimate(
    theta: &[f64],
    spec: &ModelSpec,
    data: &Dataset,
    zc: &CenteredDistanceMatrix,
    c_hat: f64,
) -> Result<HessianEstimate> {
    check_bandwidth(c_hat)?;
    let p = pieces(theta, spec, data, zc)?;
    hessian_from_pieces(&p, zc, c_hat)
}

fn hessian_from_pieces(p: &Pieces, zc: &CenteredDistanceMatrix, c_hat: f64) -> Result<HessianEstimate> {
    let mut c = c_hat;
    let mut doublings = 0;
    loop {
        let (matrix, pairs_in_band) = hessian_with_band(p, zc, c);
        if pairs_in_band > 0 || doublings == MAX_BANDWIDTH_DOUBLINGS {
            return Ok(HessianEstimate {
                matrix,
                bandwidth: c,
                pairs_in_band,
                doublings,
                degenerate: pairs_in_band == 0,
            });
        }
        c *= 2.0;
        doublings += 1;
    }
}

/// `Ω̌_n = (1/n³) Σ_i Σ_j Σ_{k∉{i,j}} { ž_ij² x̃_ij x̃_ij' + 2 ž_ij ž_ik (4 I_ij I_ik − 1) x̃_ij x̃_ik' }`
/// with `I_ij = I(ũ_ij < 0)`.
///
/// Evaluated in `O(n² p²)`: for each `i`, with `a_j = ž_ij x̃_ij`,
/// `A = Σ_j a_j` and `B = Σ_j I_ij a_j`, the inner double sum over `j ≠ k`
/// equals `4BB' − AA' − Σ_j (4 I_ij − 1) a_j a_j'`.
pub fn omega_estimate(
    theta: &[f64],
    spec: &ModelSpec,
    data: &Dataset,
    zc: &CenteredDistanceMatrix,
) -> Result<DMatrix<f64>> {
    let p = pieces(theta, spec, data, zc)?;
    Ok(omega_from_pieces(&p, zc))
}

fn omega_from_pieces(p: &Pieces, zc: &CenteredDistanceMatrix) -> DMatrix<f64> {
    let n = p.u.len();
    let k = p.jac.p();
    let nf = n as f64;
    let mut first = vec![0.0; k * k];
    let mut second = vec![0.0; k * k];
    let mut a_sum = vec![0.0; k];
    let mut b_sum = vec![0.0; k];
    let mut d = vec![0.0; k];
    for i in 0..n {
        a_sum.iter_mut().for_each(|v| *v = 0.0);
        b_sum.iter_mut().for_each(|v| *v = 0.0);
        let row = zc.row(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let z = row[j];
            if z == 0.0 {
                continue;
            }
            diff_into(&p.jac, i, j, &mut d);
            let neg = p.u[i] - p.u[j] < 0.0;
            let z2 = z * z;
            add_outer(&mut first, k, z2, &d, &d);
            let w = if neg { 3.0 } else { -1.0 };
            add_outer(&mut second, k, -w * z2, &d, &d);
            for r in 0..k {
                a_sum[r] += z * d[r];
                if neg {
                    b_sum[r] += z * d[r];
                }
            }
        }
        add_outer(&mut second, k, 4.0, &b_sum, &b_sum);
        add_outer(&mut second, k, -1.0, &a_sum, &a_sum);
    }
    let m = DMatrix::from_fn(k, k, |r, s| {
        ((nf - 2.0) * first[r * k + s] + 2.0 * second[r * k + s]) / (nf * nf * nf)
    });
    symmetrize(&m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub omega: DMatrix<f64>,
    pub hessian: DMatrix<f64>,
    /// `Ȟ⁻¹ Ω̌ Ȟ⁻¹`
    pub sigma: DMatrix<f64>,
    /// `sqrt(diag(Σ) / n)`
    pub std_errors: Vec<f64>,
    pub bandwidth: f64,
    pub n: usize,
}

impl CovarianceEstimate {
    /// Wald intervals `θ̂_k ± Φ⁻¹(1 − α/2) · se_k`.
    pub fn wald_intervals(&self, theta_hat: &[f64], alpha: f64) -> Result<Vec<(f64, f64)>> {
        if theta_hat.len() != self.std_errors.len() {
            return Err(MdepError::DimensionMismatch {
                expected: self.std_errors.len(),
                found: theta_hat.len(),
            });
        }
        let q = normal_critical_value(alpha)?;
        Ok(theta_hat
            .iter()
            .zip(&self.std_errors)
            .map(|(t, s)| (t - q * s, t + q * s))
            .collect())
    }
}

/// Sandwich covariance from `Ω̌` and `Ȟ`; `Ȟ` uses the Hall bandwidth at
/// level `alpha`.
pub fn covariance(
    theta: &[f64],
    spec: &ModelSpec,
    data: &Dataset,
    zc: &CenteredDistanceMatrix,
    alpha: f64,
) -> Result<CovarianceEstimate> {
    let c_hat = bandwidth_hall(data.n(), alpha)?;
    let p = pieces(theta, spec, data, zc)?;
    let omega = omega_from_pieces(&p, zc);
    let hessian = hessian_from_pieces(&p, zc, c_hat)?;
    if hessian.degenerate {
        return Err(MdepError::SingularHessian {
            condition: f64::INFINITY,
        });
    }
    sandwich(omega, hessian.matrix, hessian.bandwidth, data.n())
}

/// Combines `Ω` and `H` into `H⁻¹ Ω H⁻¹` and standard errors for sample size `n`.
pub fn sandwich(
    omega: DMatrix<f64>,
    hessian: DMatrix<f64>,
    bandwidth: f64,
    n: usize,
) -> Result<CovarianceEstimate> {
    let svd = hessian.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= HESSIAN_CONDITION_LIMIT) {
        return Err(MdepError::SingularHessian { condition });
    }
    let h_inv = svd
        .pseudo_inverse(0.0)
        .map_err(|_| MdepError::SingularHessian { condition })?;
    let sigma = symmetrize(&(&h_inv * &omega * &h_inv));
    let std_errors: Vec<f64> = sigma
        .diagonal()
        .iter()
        .map(|v| (v.max(0.0) / n as f64).sqrt())
        .collect();
    Ok(CovarianceEstimate {
        omega,
        hessian,
        sigma,
        std_errors,
        bandwidth,
        n,
    })
}

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" rule). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = (m - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sample_sd(values: &[f64]) -> f64 {
    let m = values.len();
    if m < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BootstrapKind {
    PairsSe,
    PercentileCi,
    EmpiricalCi,
    NormalCi,
    WildPvalue,
}

/// Bootstrap output for one scalar quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub kind: BootstrapKind,
    /// Requested replicate count.
    pub b: usize,
    pub stat0: f64,
    /// Successful replicates in replicate-index order.
    pub replicates: Vec<f64>,
    pub p_value: Option<f64>,
    /// Interval bounds for the interval kinds.
    pub interval: Option<(f64, f64)>,
    /// Bootstrap standard deviation for [`BootstrapKind::PairsSe`].
    pub std_error: Option<f64>,
    pub failures: usize,
}

/// Replicates of a pairs (row-resampling) bootstrap of the MDep fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PairsBootstrap {
    pub theta_hat: Vec<f64>,
    pub b: usize,
    /// One row per successful replicate.
    pub replicates: Vec<Vec<f64>>,
    pub failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientIntervals {
    pub std_error: f64,
    pub percentile: (f64, f64),
    pub empirical: (f64, f64),
    pub normal: (f64, f64),
}

impl PairsBootstrap {
    pub fn coefficient(&self, k: usize) -> Vec<f64> {
        self.replicates.iter().map(|r| r[k]).collect()
    }

    /// Bootstrap SD and percentile, empirical (basic) and normal-approximation
    /// intervals for coefficient `k`.
    pub fn intervals(&self, k: usize, alpha: f64) -> Result<CoefficientIntervals> {
        let mut draws = self.coefficient(k);
        if draws.is_empty() {
            return Err(MdepError::TooManyFailures {
                failed: self.failures,
                total: self.b,
            });
        }
        let q = normal_critical_value(alpha)?;
        let sd = sample_sd(&draws);
        draws.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&draws, alpha / 2.0);
        let hi = quantile_sorted(&draws, 1.0 - alpha / 2.0);
        let t = self.theta_hat[k];
        Ok(CoefficientIntervals {
            std_error: sd,
            percentile: (lo, hi),
            empirical: (2.0 * t - hi, 2.0 * t - lo),
            normal: (t - q * sd, t + q * sd),
        })
    }

    /// One [`BootstrapResult`] per kind for coefficient `k`.
    pub fn results(&self, k: usize, alpha: f64) -> Result<Vec<BootstrapResult>> {
        let iv = self.intervals(k, alpha)?;
        let draws = self.coefficient(k);
        let make = |kind, interval, std_error| BootstrapResult {
            kind,
            b: self.b,
            stat0: self.theta_hat[k],
            replicates: draws.clone(),
            p_value: None,
            interval,
            std_error,
            failures: self.failures,
        };
        Ok(vec![
            make(BootstrapKind::PairsSe, None, Some(iv.std_error)),
            make(BootstrapKind::PercentileCi, Some(iv.percentile), None),
            make(BootstrapKind::EmpiricalCi, Some(iv.empirical), None),
            make(BootstrapKind::NormalCi, Some(iv.normal), None),
        ])
    }
}

/// Resamples rows `(y, x, z)` jointly with replacement and refits from
/// `theta_hat` with a single start. Replicate `r` draws from stream
/// `(seed, r)`; failed refits are dropped and counted.
pub fn pairs_bootstrap(
    spec: &ModelSpec,
    data: &Dataset,
    theta_hat: &[f64],
    opts: &FitOptions,
    b: usize,
    seed: u64,
) -> Result<PairsBootstrap> {
    if b < 2 {
        return Err(MdepError::InvalidArgument(format!(
            "the pairs bootstrap needs at least 2 replicates, got {b}"
        )));
    }
    if theta_hat.len() != spec.p_theta() {
        return Err(MdepError::DimensionMismatch {
            expected: spec.p_theta(),
            found: theta_hat.len(),
        });
    }
    let n = data.n();
    let refit = opts.refit_from(theta_hat);
    let rows: Vec<usize> = (0..n).collect();
    let outcomes: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream_rng(seed, r as u64);
            let idx: Vec<usize> = (0..n).map(|_| *rows.choose(&mut rng).expect("n > 0")).collect();
            let sample = data.resample(&idx).ok()?;
            let model = BoundModel::new(*spec, &sample).ok()?;
            let zc = dcov::v_center(&dcov::pairwise_distances(sample.z()).ok()?);
            let fit = mdep_fit_prepared(&model, &zc, &refit).ok()?;
            fit.theta_hat.iter().all(|v| v.is_finite()).then_some(fit.theta_hat)
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    Ok(PairsBootstrap {
        theta_hat: theta_hat.to_vec(),
        b,
        replicates: outcomes.into_iter().flatten().collect(),
        failures,
    })
}

/// Mammen's two-point weight: `−(√5 − 1)/2` with probability
/// `(√5 + 1)/(2√5)`, otherwise `(√5 + 1)/2`.
pub fn mammen_draw<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let s5 = 5f64.sqrt();
    if rng.random::<f64>() < (s5 + 1.0) / (2.0 * s5) {
        -(s5 - 1.0) / 2.0
    } else {
        (s5 + 1.0) / 2.0
    }
}

/// Upper-tail bootstrap p-value `(#{T* > T} + V · #{T* = T}) / B`.
///
/// `V` is a uniform draw used only to split exact ties; without ties this is
/// the strict-inequality p-value.
pub fn upper_tail_p_value(stat0: f64, replicates: &[f64], tie_draw: f64) -> f64 {
    let b = replicates.len();
    if b == 0 {
        return f64::NAN;
    }
    let above = replicates.iter().filter(|&&t| t > stat0).count();
    let ties = replicates.iter().filter(|&&t| t == stat0).count();
    (above as f64 + tie_draw * ties as f64) / b as f64
}

fn tie_draw(seed: u64, b: usize) -> f64 {
    let mut rng = rng::stream_rng(seed, b as u64);
    rng.random::<f64>()
}

fn check_test_replicates(b: usize) -> Result<()> {
    if b < MIN_TEST_REPLICATES {
        Err(MdepError::InvalidArgument(format!(
            "bootstrap tests need at least {MIN_TEST_REPLICATES} replicates, got {b}"
        )))
    } else {
        Ok(())
    }
}

/// `T_n = −(1/n) Σ_{i≠j} û_i û_j ‖z_i − z_j‖`.
pub fn spec_statistic(u_hat: &[f64], zd: &DistanceMatrix) -> Result<f64> {
    let n = u_hat.len();
    if zd.n() != n {
        return Err(MdepError::DimensionMismatch {
            expected: n,
            found: zd.n(),
        });
    }
    let mut total = 0.0;
    for i in 0..n {
        let row = zd.row(i);
        let mut inner = 0.0;
        for j in (i + 1)..n {
            inner += u_hat[j] * row[j];
        }
        total += u_hat[i] * inner;
    }
    Ok(-2.0 * total / n as f64)
}

fn centered(values: &[f64]) -> (Vec<f64>, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| v - mean).collect(), mean)
}

/// Wild-bootstrap specification test based on `T_n`.
///
/// Replicate `r` draws Mammen weights from stream `(seed, r)`, rebuilds the
/// outcome as `G(G⁻¹(y) − u(θ̂) + ū + √(n/(n − p − 1)) û ν)`, refits from
/// `θ̂` with a single start and recomputes `T*`. The p-value is
/// `(1/B) Σ I(T* > T_n)` over successful replicates; more than 10% failed
/// refits aborts the test.
pub fn wild_spec_test(
    spec: &ModelSpec,
    data: &Dataset,
    theta_hat: &[f64],
    opts: &FitOptions,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    check_test_replicates(b)?;
    let n = data.n();
    let p = spec.p_theta();
    if n <= p + 1 {
        return Err(MdepError::TooFewObservations {
            required: p + 2,
            found: n,
        });
    }
    let model = BoundModel::new(*spec, data)?;
    let zd = dcov::pairwise_distances(data.z())?;
    let zc = dcov::v_center(&zd);
    let u = model.residuals(theta_hat)?;
    let (u_hat, u_bar) = centered(&u);
    let stat0 = spec_statistic(&u_hat, &zd)?;
    let scale = (n as f64 / (n - p - 1) as f64).sqrt();
    let family = spec.family();
    let fitted: Vec<f64> = model
        .transformed_outcome()
        .iter()
        .zip(&u)
        .map(|(t, ui)| t - ui + u_bar)
        .collect();
    let refit = opts.refit_from(theta_hat);

    let outcomes: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream_rng(seed, r as u64);
            let y_star: Vec<f64> = fitted
                .iter()
                .zip(&u_hat)
                .map(|(f, uh)| family.outcome_from_transformed(f + scale * uh * mammen_draw(&mut rng)))
                .collect();
            let sample = data.with_outcome(y_star).ok()?;
            let bound = BoundModel::new(*spec, &sample).ok()?;
            let fit = mdep_fit_prepared(&bound, &zc, &refit).ok()?;
            let u_star = bound.residuals(&fit.theta_hat).ok()?;
            let (uh_star, _) = centered(&u_star);
            spec_statistic(&uh_star, &zd).ok().filter(|t| t.is_finite())
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    if failures as f64 > MAX_FAILURE_SHARE * b as f64 {
        return Err(MdepError::TooManyFailures { failed: failures, total: b });
    }
    let replicates: Vec<f64> = outcomes.into_iter().flatten().collect();
    let p_value = upper_tail_p_value(stat0, &replicates, tie_draw(seed, b));
    Ok(BootstrapResult {
        kind: BootstrapKind::WildPvalue,
        b,
        stat0,
        replicates,
        p_value: Some(p_value),
        interval: None,
        std_error: None,
        failures,
    })
}

/// Residuals of `x2` from its least-squares projection on `[1, controls, z2]`.
pub fn nonlinear_residuals(x2: &[f64], z2: &DMatrix<f64>, controls: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = x2.len();
    if z2.nrows() != n || controls.nrows() != n {
        return Err(MdepError::DimensionMismatch {
            expected: n,
            found: if z2.nrows() != n { z2.nrows() } else { controls.nrows() },
        });
    }
    let mut design = DMatrix::zeros(n, controls.ncols() + z2.ncols());
    design.columns_mut(0, controls.ncols()).copy_from(controls);
    design
        .columns_mut(controls.ncols(), z2.ncols())
        .copy_from(z2);
    let design = with_intercept(&design);
    let beta = ols_fit(x2, &design)?;
    let fitted = &design * beta;
    Ok(x2.iter().zip(fitted.iter()).map(|(a, f)| a - f).collect())
}

/// Wild-bootstrap test of `pdC_n(x2, z2; controls) = 0`.
///
/// With `nonlinear` set, `x2` is first replaced by its residuals from a
/// linear projection on `[1, controls, z2]`, so that only dependence beyond
/// the linear one is tested. Replicates use `x̌* = √(n/(n − p − 1)) x̌ ν`
/// with `x̌ = x2 − Ē_n[x2]` and `p` the number of control columns plus one.
pub fn pdcov_relevance_test(
    x2: &[f64],
    z2: &DMatrix<f64>,
    controls: &DMatrix<f64>,
    b: usize,
    seed: u64,
    nonlinear: bool,
) -> Result<BootstrapResult> {
    check_test_replicates(b)?;
    let n = x2.len();
    if n < 4 {
        return Err(MdepError::TooFewObservations { required: 4, found: n });
    }
    let target = if nonlinear {
        nonlinear_residuals(x2, z2, controls)?
    } else {
        x2.to_vec()
    };
    if let Some(row) = target.iter().position(|v| !v.is_finite()) {
        return Err(MdepError::NonFinite { what: "x2", row });
    }
    let ctx = PartialDcovContext::new(z2, controls)?;
    let stat0 = ctx.statistic(&target)?;
    let (x_check, _) = centered(&target);
    let p = controls.ncols() + 1;
    let scale = if n > p + 1 {
        (n as f64 / (n - p - 1) as f64).sqrt()
    } else {
        1.0
    };
    let replicates: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream_rng(seed, r as u64);
            let star: Vec<f64> = x_check
                .iter()
                .map(|x| scale * x * mammen_draw(&mut rng))
                .collect();
            ctx.statistic(&star).expect("length checked")
        })
        .collect();
    let p_value = upper_tail_p_value(stat0, &replicates, tie_draw(seed, b));
    Ok(BootstrapResult {
        kind: BootstrapKind::WildPvalue,
        b,
        stat0,
        replicates,
        p_value: Some(p_value),
        interval: None,
        std_error: None,
        failures: 0,
    })
}

/// Standard errors and Wald intervals for a fitted model, as reported by the
/// command-line front end.
pub fn fit_covariance(
    spec: &ModelSpec,
    data: &Dataset,
    theta_hat: &[f64],
    alpha: f64,
) -> Result<CovarianceEstimate> {
    let zc = dcov::v_center(&dcov::pairwise_distances(data.z())?);
    covariance(theta_hat, spec, data, &zc, alpha)
}
