//! Data-generating processes for the Monte Carlo designs.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{MdepError, Result};
use crate::estimator::{ols_fit, with_intercept};
use crate::models::{Dataset, Family, ModelSpec};
use crate::rng::{normal, open_unit};

/// Correlation between `x1` and `x*` in every design.
pub const COVARIATE_CORRELATION: f64 = 0.25;

/// `−Φ⁻¹(0.25)`, the upper quartile of the standard normal.
pub const UPPER_QUARTILE: f64 = 0.674_489_750_196_081_7;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DgpId {
    LinI,
    LinII,
    LinIII,
    LinIV,
    LinV,
    LinVI,
    LinVII,
    Lin2I,
    Lin2II,
    Lin2III,
    /// `lin2-i` with the endogenous `x1 = (ẋ + u)/√2`, the power design of
    /// the specification test.
    Lin2IEndogenous,
    NlI,
    NlII,
    NlIII,
    NlIV,
    NlV,
    NlVI,
    NlVII,
    CovI,
    CovII,
    CovIII,
    CovIV,
    CovV,
}

/// Least-squares comparator reported alongside MDep in the simulation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    Ols,
    Tsls,
}

impl DgpId {
    pub const ALL: [DgpId; 23] = [
        DgpId::LinI,
        DgpId::LinII,
        DgpId::LinIII,
        DgpId::LinIV,
        DgpId::LinV,
        DgpId::LinVI,
        DgpId::LinVII,
        DgpId::Lin2I,
        DgpId::Lin2II,
        DgpId::Lin2III,
        DgpId::Lin2IEndogenous,
        DgpId::NlI,
        DgpId::NlII,
        DgpId::NlIII,
        DgpId::NlIV,
        DgpId::NlV,
        DgpId::NlVI,
        DgpId::NlVII,
        DgpId::CovI,
        DgpId::CovII,
        DgpId::CovIII,
        DgpId::CovIV,
        DgpId::CovV,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DgpId::LinI => "lin-i",
            DgpId::LinII => "lin-ii",
            DgpId::LinIII => "lin-iii",
            DgpId::LinIV => "lin-iv",
            DgpId::LinV => "lin-v",
            DgpId::LinVI => "lin-vi",
            DgpId::LinVII => "lin-vii",
            DgpId::Lin2I => "lin2-i",
            DgpId::Lin2II => "lin2-ii",
            DgpId::Lin2III => "lin2-iii",
            DgpId::Lin2IEndogenous => "lin2-i-endog",
            DgpId::NlI => "nl-i",
            DgpId::NlII => "nl-ii",
            DgpId::NlIII => "nl-iii",
            DgpId::NlIV => "nl-iv",
            DgpId::NlV => "nl-v",
            DgpId::NlVI => "nl-vi",
            DgpId::NlVII => "nl-vii",
            DgpId::CovI => "cov-i",
            DgpId::CovII => "cov-ii",
            DgpId::CovIII => "cov-iii",
            DgpId::CovIV => "cov-iv",
            DgpId::CovV => "cov-v",
        }
    }

    pub fn family(self) -> Family {
        use DgpId::*;
        match self {
            NlI | NlII | NlIII | NlIV | NlV | NlVI | CovIV | CovV => Family::ImplicitExp,
            NlVII => Family::ExpIndex,
            _ => Family::Linear,
        }
    }

    /// Comparator shown next to MDep, if the design has one.
    pub fn comparator(self) -> Option<Comparator> {
        use DgpId::*;
        match self {
            LinI | LinVII | Lin2I | Lin2II | Lin2III | Lin2IEndogenous => Some(Comparator::Ols),
            LinII | LinIII | LinIV | LinV | LinVI => Some(Comparator::Tsls),
            CovI => Some(Comparator::Ols),
            CovII | CovIII => Some(Comparator::Tsls),
            _ => None,
        }
    }

    pub fn true_theta(self) -> [f64; 2] {
        [1.0, -1.0]
    }

    pub fn true_intercept(self) -> f64 {
        use DgpId::*;
        match self {
            NlI | NlII | NlIII | NlIV | NlV => SQRT3.ln() + 2.0 * SQRT3,
            _ => 0.4,
        }
    }

    fn truncated(self) -> bool {
        matches!(self, DgpId::NlI | DgpId::NlII | DgpId::NlIII)
    }
}

impl fmt::Display for DgpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DgpId {
    type Err = MdepError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        DgpId::ALL
            .iter()
            .copied()
            .find(|id| id.name() == key)
            .ok_or_else(|| MdepError::UnknownSpec(s.to_string()))
    }
}

/// A design at a given sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub id: DgpId,
    pub n: usize,
}

impl DgpSpec {
    pub fn new(id: DgpId, n: usize) -> Result<Self> {
        if n < 10 {
            return Err(MdepError::TooFewObservations { required: 10, found: n });
        }
        Ok(Self { id, n })
    }

    pub fn true_theta(&self) -> Vec<f64> {
        self.id.true_theta().to_vec()
    }

    pub fn true_intercept(&self) -> f64 {
        self.id.true_intercept()
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::new(self.id.family(), 2)
    }
}

/// One simulated sample with its truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub data: Dataset,
    pub theta: Vec<f64>,
    pub intercept: f64,
}

/// `(χ²(1) − 1)/√2`.
pub fn chi_square_innovation<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let v = normal(rng);
    (v * v - 1.0) * FRAC_1_SQRT_2
}

/// Cauchy draw by inverting the distribution function.
pub fn cauchy<R: Rng + ?Sized>(rng: &mut R, location: f64, scale: f64) -> f64 {
    location + scale * (PI * (open_unit(rng) - 0.5)).tan()
}

pub fn uniform_sym<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    rng.random_range(-half_width..half_width)
}

/// Standard normal pair with correlation [`COVARIATE_CORRELATION`],
/// optionally restricted to `[−bound, bound]²` by rejection.
pub fn correlated_pair<R: Rng + ?Sized>(rng: &mut R, bound: Option<f64>) -> (f64, f64) {
    let r = COVARIATE_CORRELATION;
    let s = (1.0 - r * r).sqrt();
    loop {
        let a = normal(rng);
        let b = r * a + s * normal(rng);
        match bound {
            Some(c) if a.abs() > c || b.abs() > c => continue,
            _ => return (a, b),
        }
    }
}

/// Sample standard deviation (divisor `n − 1`).
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn scale_by_sd(values: &mut [f64]) {
    let sd = sample_sd(values);
    values.iter_mut().for_each(|v| *v /= sd);
}

/// `T̃(ẋ, a) = a/(max − min) · (2ẋ − (max + min))`, mapping the sample onto
/// `[−a, a]`.
pub fn squash_to_interval(values: &mut [f64], a: f64) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if range <= 0.0 {
        return;
    }
    for v in values.iter_mut() {
        *v = (a / range * (2.0 * *v - (max + min))).clamp(-a, a);
    }
}

/// In-sample least-squares residuals of `target` on `[1, regressors]`.
pub fn projection_residuals(target: &[f64], regressors: &DMatrix<f64>) -> Result<Vec<f64>> {
    let design = with_intercept(regressors);
    let beta = ols_fit(target, &design)?;
    let fitted = &design * beta;
    Ok(target.iter().zip(fitted.iter()).map(|(t, f)| t - f).collect())
}

fn columns(cols: &[&[f64]]) -> DMatrix<f64> {
    let n = cols[0].len();
    DMatrix::from_fn(n, cols.len(), |i, k| cols[k][i])
}

/// Draws one sample of design `spec`.
pub fn dgp_generate<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<Draw> {
    use DgpId::*;
    let n = spec.n;
    let nf = n as f64;
    let id = spec.id;
    let theta = id.true_theta();
    let tc = id.true_intercept();
    let bound = id.truncated().then_some(SQRT3);

    let mut x1 = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b) = correlated_pair(rng, bound);
        x1.push(a);
        xs.push(b);
    }
    let index = |x1: &[f64], x2: &[f64], i: usize| theta[0] * x1[i] + theta[1] * x2[i];

    let (y, x2, z): (Vec<f64>, Vec<f64>, DMatrix<f64>) = match id {
        LinI | LinII => {
            let nu: Vec<f64> = (0..n).map(|_| chi_square_innovation(rng)).collect();
            let phi = |v: f64| (-0.5 * v * v).exp() / (2.0 * PI).sqrt();
            let ud: Vec<f64> = (0..n).map(|i| nu[i] + phi((x1[i] - xs[i]) / 0.97)).collect();
            let (m, sd) = (mean(&ud), sample_sd(&ud));
            let u: Vec<f64> = ud.iter().map(|v| (v - m) / sd).collect();
            if id == LinI {
                let x2 = xs.clone();
                let y = (0..n).map(|i| tc + index(&x1, &x2, i) + u[i]).collect();
                (y, x2, columns(&[&x1, &xs]))
            } else {
                let x2: Vec<f64> = (0..n).map(|i| (xs[i] + nu[i]) * FRAC_1_SQRT_2).collect();
                let z2: Vec<f64> = (0..n).map(|i| (xs[i] + normal(rng)) * FRAC_1_SQRT_2).collect();
                let y = (0..n).map(|i| tc + index(&x1, &x2, i) + u[i]).collect();
                (y, x2, columns(&[&x1, &z2]))
            }
        }
        LinIII | LinIV => {
            let nu: Vec<f64> = (0..n).map(|_| chi_square_innovation(rng)).collect();
            let mut ud = Vec::with_capacity(n);
            for i in 0..n {
                let d = if rng.random::<bool>() { 1.0 } else { 0.0 };
                ud.push((1.0 + d * x1[i].abs() + (1.0 - d) * xs[i].abs()) * nu[i]);
            }
            scale_by_sd(&mut ud);
            let mut x2: Vec<f64> = (0..n)
                .map(|i| {
                    let weak = if id == LinIII { 6.0 * xs[i] / nf.sqrt() } else { 0.0 };
                    weak + (1.0 + xs[i]) * nu[i]
                })
                .collect();
            scale_by_sd(&mut x2);
            let z2: Vec<f64> = (0..n).map(|i| (xs[i] + normal(rng)) * FRAC_1_SQRT_2).collect();
            let y = (0..n).map(|i| tc + index(&x1, &x2, i) + ud[i]).collect();
            (y, x2, columns(&[&x1, &z2]))
        }
        LinV | LinVI | LinVII => {
            let nu: Vec<f64> = (0..n).map(|_| chi_square_innovation(rng)).collect();
            let x2: Vec<f64> = (0..n).map(|i| (xs[i] + nu[i]) * FRAC_1_SQRT_2).collect();
            let z2: Vec<f64> = match id {
                LinV => xs.iter().map(|v| v.abs() / (1.0 - 2.0 / PI).sqrt()).collect(),
                LinVI => xs
                    .iter()
                    .map(|v| if v.abs() < UPPER_QUARTILE { 2.0 } else { 0.0 })
                    .collect(),
                _ => {
                    let abs_x2: Vec<f64> = x2.iter().map(|v| v.abs()).collect();
                    projection_residuals(&abs_x2, &columns(&[&x1, &x2]))?
                }
            };
            let y = (0..n).map(|i| tc + index(&x1, &x2, i) + nu[i]).collect();
            (y, x2, columns(&[&x1, &z2]))
        }
        Lin2I | Lin2II | Lin2III | CovI => {
            let u: Vec<f64> = (0..n)
                .map(|_| match id {
                    Lin2II => normal(rng),
                    Lin2III => cauchy(rng, 0.0, 1.0),
                    _ => chi_square_innovation(rng),
                })
                .collect();
            let x2 = xs.clone();
            let y = (0..n).map(|i| tc + index(&x1, &x2, i) + u[i]).collect();
            (y, x2, columns(&[&x1, &xs]))
        }
        Lin2IEndogenous => {
            // x1 = (ẋ + u)/√2 with corr(ẋ, x*) = 0.25
            let u: Vec<f64> = (0..n).map(|_| chi_square_innovation(rng)).collect();
            let endog: Vec<f64> = (0..n).map(|i| (x1[i] + u[i]) * FRAC_1_SQRT_2).collect();
            let x2 = xs.clone();
            let y = (0..n).map(|i| tc + index(&endog, &x2, i) + u[i]).collect();
            x1 = endog;
            (y, x2, columns(&[&x1, &xs]))
        }
        CovII | CovIII | CovIV => {
            let u: Vec<f64> = (0..n)
                .map(|_| {
                    if id == CovIV {
                        uniform_sym(rng, SQRT3)
                    } else {
                        chi_square_innovation(rng)
                    }
                })
                .collect();
            let x2: Vec<f64> = (0..n).map(|i| (xs[i] + u[i]) * FRAC_1_SQRT_2).collect();
            let z = if id == CovII {
                let z2: Vec<f64> = xs.iter().map(|v| v.abs() / (1.0 - 2.0 / PI).sqrt()).collect();
                columns(&[&x1, &z2])
            } else {
                let h = SQRT3 / 2.0;
                let z2: Vec<f64> = xs.iter().map(|v| 0.5 * v + h * normal(rng)).collect();
                let z3: Vec<f64> = xs.iter().map(|v| 0.5 * v + h * normal(rng)).collect();
                columns(&[&x1, &z2, &z3])
            };
            let y = (0..n)
                .map(|i| {
                    if id == CovIV {
                        (tc + index(&x1, &x2, i)).exp() + u[i]
                    } else {
                        tc + index(&x1, &x2, i) + u[i]
                    }
                })
                .collect();
            (y, x2, z)
        }
        CovV => {
            let x2 = xs.clone();
            let y = (0..n)
                .map(|i| (tc + index(&x1, &x2, i)).exp() + uniform_sym(rng, SQRT3))
                .collect();
            (y, x2, columns(&[&x1, &xs]))
        }
        NlI => {
            let x2 = xs.clone();
            let y = (0..n)
                .map(|i| {
                    let d = if rng.random::<bool>() { 1.0 } else { 0.0 };
                    let nu = uniform_sym(rng, SQRT3);
                    let u = SQRT3 / 3.0 * (d * x1[i].abs() + (1.0 - d) * x2[i].abs()) * nu;
                    (tc + index(&x1, &x2, i)).exp() + u
                })
                .collect();
            (y, x2, columns(&[&x1, &xs]))
        }
        NlII => {
            let nu: Vec<f64> = (0..n).map(|_| uniform_sym(rng, SQRT3)).collect();
            let mut x2: Vec<f64> = (0..n).map(|i| xs[i] + nu[i] * FRAC_1_SQRT_2).collect();
            squash_to_interval(&mut x2, SQRT3);
            let y = (0..n).map(|i| (tc + index(&x1, &x2, i)).exp() + nu[i]).collect();
            (y, x2, columns(&[&x1, &xs]))
        }
        NlIII => {
            // the scale of u̇ uses |x*| in place of |x2|, which is itself built from u
            let mut u: Vec<f64> = (0..n)
                .map(|i| {
                    let d = if rng.random::<bool>() { 1.0 } else { 0.0 };
                    (1.0 + d * x1[i].abs() + (1.0 - d) * xs[i].abs()) * uniform_sym(rng, SQRT3)
                })
                .collect();
            squash_to_interval(&mut u, SQRT3);
            let mut x2: Vec<f64> = (0..n)
                .map(|i| 3.0 * xs[i] / nf.sqrt() + (1.0 + xs[i]) * u[i] * FRAC_1_SQRT_2)
                .collect();
            squash_to_interval(&mut x2, SQRT3);
            let y = (0..n).map(|i| (tc + index(&x1, &x2, i)).exp() + u[i]).collect();
            (y, x2, columns(&[&x1, &xs]))
        }
        NlIV | NlV => {
            let u: Vec<f64> = (0..n).map(|_| uniform_sym(rng, SQRT3)).collect();
            let (x2, mut z2, mut z3): (Vec<f64>, Vec<f64>, Vec<f64>) = if id == NlIV {
                let w_sd = 2f64.sqrt();
                let x2 = (0..n).map(|i| (xs[i] + u[i]) * FRAC_1_SQRT_2).collect();
                let base: Vec<f64> = xs.iter().map(|v| v.abs() + v * v).collect();
                let z2 = base.iter().map(|b| b + w_sd * normal(rng)).collect();
                let z3 = base.iter().map(|b| b + w_sd * normal(rng)).collect();
                (x2, z2, z3)
            } else {
                let ind = |b: bool| if b { 1.0 } else { 0.0 };
                let weak = 6.0 / nf.sqrt();
                let c = (2.0 / PI).sqrt();
                let x2 = (0..n).map(|i| ind(xs[i] + u[i] <= 0.0)).collect();
                let z2 = xs
                    .iter()
                    .map(|v| ind(-c + v.abs() + weak * v + normal(rng) <= 0.0))
                    .collect();
                let z3 = xs
                    .iter()
                    .map(|v| ind(-1.0 + v * v + weak * v + normal(rng) <= 0.0))
                    .collect();
                (x2, z2, z3)
            };
            scale_by_sd(&mut z2);
            scale_by_sd(&mut z3);
            let y = (0..n)
                .map(|i| ((tc + index(&x1, &x2, i)).exp() + u[i]).max(0.0))
                .collect();
            (y, x2, columns(&[&x1, &z2, &z3]))
        }
        NlVI => {
            let x2 = xs.clone();
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let lambda = (tc + index(&x1, &x2, i)).exp();
                let pois = Poisson::new(lambda)
                    .map_err(|e| MdepError::InvalidArgument(format!("poisson rate {lambda}: {e}")))?;
                y.push(pois.sample(rng));
            }
            (y, x2, columns(&[&x1, &xs]))
        }
        NlVII => {
            let x2 = xs.clone();
            let y = (0..n)
                .map(|i| tc + index(&x1, &x2, i).exp() + cauchy(rng, -0.4, 1.0))
                .collect();
            (y, x2, columns(&[&x1, &xs]))
        }
    };
    let x = columns(&[&x1, &x2]);
    let data = Dataset::new(y, x, z)?;
    Ok(Draw {
        data,
        theta: theta.to_vec(),
        intercept: tc,
    })
}

/// Non-monotone transformation in the relevance design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelevanceTransform {
    /// `|z2|`
    Abs,
    /// `I(|z2| < −Φ⁻¹(0.25))`
    Indicator,
}

impl RelevanceTransform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            RelevanceTransform::Abs => v.abs(),
            RelevanceTransform::Indicator => {
                if v.abs() < UPPER_QUARTILE {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl FromStr for RelevanceTransform {
    type Err = MdepError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "abs" => Ok(RelevanceTransform::Abs),
            "indicator" => Ok(RelevanceTransform::Indicator),
            other => Err(MdepError::InvalidArgument(format!(
                "unknown relevance transform `{other}` (expected abs or indicator)"
            ))),
        }
    }
}

/// First-stage sample `x2 = x1 + z2 + λ f(z2) + u` for the relevance test.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceDraw {
    pub x2: Vec<f64>,
    pub z2: DMatrix<f64>,
    pub x1: DMatrix<f64>,
}

pub fn relevance_generate<R: Rng + ?Sized>(
    n: usize,
    lambda: f64,
    transform: RelevanceTransform,
    rng: &mut R,
) -> RelevanceDraw {
    let mut x1 = DMatrix::zeros(n, 1);
    let mut z2 = DMatrix::zeros(n, 1);
    let mut x2 = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = correlated_pair(rng, None);
        x1[(i, 0)] = a;
        z2[(i, 0)] = b;
        x2.push(a + b + lambda * transform.apply(b) + chi_square_innovation(rng));
    }
    RelevanceDraw { x2, z2, x1 }
}
