//! Disturbance-function families `u_i(θ) = G⁻¹(y_i) − g(x_i, θ)`.
//!
//! For families that are additive in the intercept the intercept cancels in
//! every pairwise difference `u_i − u_j`, so residuals are computed from the
//! slopes alone. The implicit-intercept exponential family instead pins the
//! intercept down as the value `θ_c(θ)` that makes the sample mean of the
//! disturbances zero.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MdepError, Result};

/// Link/index family of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// `u = y − xθ`
    Linear,
    /// `u = log y − xθ`, `y > 0`
    LogLinear,
    /// `u = log(y / (1 − y)) − xθ`, `0 < y < 1`
    FractionalLogit,
    /// `u = y − exp(xθ)` with an additive (differenced) intercept
    ExpIndex,
    /// `u = y − exp(θ_c(θ) + xθ)` with the intercept solved from `Ē_n[u] = 0`
    ImplicitExp,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Linear,
        Family::LogLinear,
        Family::FractionalLogit,
        Family::ExpIndex,
        Family::ImplicitExp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::LogLinear => "log-linear",
            Family::FractionalLogit => "fractional-logit",
            Family::ExpIndex => "exp-index",
            Family::ImplicitExp => "implicit-exp",
        }
    }

    /// True when `G⁻¹(y)` is linear in the index `xθ`.
    pub fn is_linear_index(self) -> bool {
        matches!(
            self,
            Family::Linear | Family::LogLinear | Family::FractionalLogit
        )
    }

    pub fn default_intercept_mode(self) -> InterceptMode {
        match self {
            Family::ImplicitExp => InterceptMode::Implicit,
            _ => InterceptMode::Differenced,
        }
    }

    /// `G⁻¹(y)`, rejecting outcomes outside the link's domain.
    pub fn transform_outcome(self, y: f64, row: usize) -> Result<f64> {
        let bad = || MdepError::LinkDomain {
            family: self.name(),
            row,
            value: y,
        };
        match self {
            Family::Linear | Family::ExpIndex | Family::ImplicitExp => Ok(y),
            Family::LogLinear => {
                if y > 0.0 {
                    Ok(y.ln())
                } else {
                    Err(bad())
                }
            }
            Family::FractionalLogit => {
                if y > 0.0 && y < 1.0 {
                    Ok((y / (1.0 - y)).ln())
                } else {
                    Err(bad())
                }
            }
        }
    }

    /// `G(t)`, the inverse of [`Family::transform_outcome`].
    pub fn outcome_from_transformed(self, t: f64) -> f64 {
        match self {
            Family::Linear | Family::ExpIndex | Family::ImplicitExp => t,
            Family::LogLinear => t.exp(),
            Family::FractionalLogit => 1.0 / (1.0 + (-t).exp()),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = MdepError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Family::Linear),
            "log-linear" => Ok(Family::LogLinear),
            "fractional-logit" => Ok(Family::FractionalLogit),
            "exp-index" | "exp-index-additive" => Ok(Family::ExpIndex),
            "implicit-exp" | "implicit-intercept-exp" => Ok(Family::ImplicitExp),
            other => Err(MdepError::InvalidArgument(format!("unknown model family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterceptMode {
    Differenced,
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    family: Family,
    intercept_mode: InterceptMode,
    p_theta: usize,
}

impl ModelSpec {
    /// Model with the family's natural intercept mode and `p_theta` slopes.
    pub fn new(family: Family, p_theta: usize) -> Self {
        Self {
            family,
            intercept_mode: family.default_intercept_mode(),
            p_theta,
        }
    }

    pub fn with_intercept_mode(
        family: Family,
        intercept_mode: InterceptMode,
        p_theta: usize,
    ) -> Result<Self> {
        if intercept_mode != family.default_intercept_mode() {
            return Err(MdepError::InvalidArgument(format!(
                "intercept mode {intercept_mode:?} is not available for the {family} family"
            )));
        }
        Ok(Self::new(family, p_theta))
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn intercept_mode(&self) -> InterceptMode {
        self.intercept_mode
    }

    pub fn p_theta(&self) -> usize {
        self.p_theta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnNames {
    pub outcome: String,
    pub covariates: Vec<String>,
    pub instruments: Vec<String>,
}

impl ColumnNames {
    fn generated(p_x: usize, p_z: usize) -> Self {
        Self {
            outcome: "y".into(),
            covariates: (1..=p_x).map(|k| format!("x{k}")).collect(),
            instruments: (1..=p_z).map(|k| format!("z{k}")).collect(),
        }
    }
}

/// Observed outcome, covariates and instruments.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    names: ColumnNames,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let names = ColumnNames::generated(x.ncols(), z.ncols());
        Self::with_names(y, x, z, names)
    }

    pub fn with_names(
        y: Vec<f64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        names: ColumnNames,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n {
            return Err(MdepError::DimensionMismatch {
                expected: n,
                found: x.nrows(),
            });
        }
        if z.nrows() != n {
            return Err(MdepError::DimensionMismatch {
                expected: n,
                found: z.nrows(),
            });
        }
        if n < 4 {
            return Err(MdepError::TooFewObservations {
                required: 4,
                found: n,
            });
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(MdepError::NonFinite { what: "outcome", row });
        }
        for (what, m) in [("covariate", &x), ("instrument", &z)] {
            for i in 0..n {
                if m.row(i).iter().any(|v| !v.is_finite()) {
                    return Err(MdepError::NonFinite { what, row: i });
                }
            }
        }
        for (column, col) in z.column_iter().enumerate() {
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                return Err(MdepError::ConstantInstrument { column });
            }
        }
        Ok(Self { y, x, z, names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn names(&self) -> &ColumnNames {
        &self.names
    }

    /// Same covariates and instruments with a new outcome vector.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        Self::with_names(y, self.x.clone(), self.z.clone(), self.names.clone())
    }

    /// Rows `indices` (with repetition) of the dataset.
    pub fn resample(&self, indices: &[usize]) -> Result<Self> {
        let y = indices.iter().map(|&i| self.y[i]).collect();
        let x = self.x.select_rows(indices.iter());
        let z = self.z.select_rows(indices.iter());
        Self::with_names(y, x, z, self.names.clone())
    }

    /// True when the instrument matrix equals the covariate matrix.
    pub fn instruments_are_covariates(&self) -> bool {
        self.x == self.z
    }
}

/// `n × p_θ` matrix of derivatives `∂u_i/∂θ'`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl JacobianMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.p + k]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.p, &self.data)
    }
}

/// A model bound to a dataset with the outcome transformation applied once.
///
/// Used by the optimizer and the inference routines, which evaluate
/// residuals many times for the same data.
#[derive(Debug, Clone)]
pub struct BoundModel<'a> {
    spec: ModelSpec,
    data: &'a Dataset,
    transformed: Vec<f64>,
    mean_y: f64,
}

impl<'a> BoundModel<'a> {
    pub fn new(spec: ModelSpec, data: &'a Dataset) -> Result<Self> {
        if data.x.ncols() != spec.p_theta {
            return Err(MdepError::DimensionMismatch {
                expected: spec.p_theta,
                found: data.x.ncols(),
            });
        }
        let transformed = data
            .y
            .iter()
            .enumerate()
            .map(|(row, &y)| spec.family.transform_outcome(y, row))
            .collect::<Result<Vec<_>>>()?;
        let mean_y = data.y.iter().sum::<f64>() / data.n() as f64;
        Ok(Self {
            spec,
            data,
            transformed,
            mean_y,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    /// `G⁻¹(y_i)` for every observation.
    pub fn transformed_outcome(&self) -> &[f64] {
        &self.transformed
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.spec.p_theta {
            return Err(MdepError::DimensionMismatch {
                expected: self.spec.p_theta,
                found: theta.len(),
            });
        }
        if let Some(row) = theta.iter().position(|v| !v.is_finite()) {
            return Err(MdepError::NonFinite {
                what: "parameter",
                row,
            });
        }
        Ok(())
    }

    fn index(&self, theta: &[f64]) -> DVector<f64> {
        &self.data.x * DVector::from_column_slice(theta)
    }

    pub fn implicit_intercept(&self, theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        self.implicit_intercept_from_index(&self.index(theta))
    }

    fn implicit_intercept_from_index(&self, index: &DVector<f64>) -> Result<f64> {
        if !(self.mean_y > 0.0) {
            return Err(MdepError::NonIdentifiedIntercept {
                reason: format!("mean outcome {} is not positive", self.mean_y),
            });
        }
        let mean_exp = index.iter().map(|v| v.exp()).sum::<f64>() / index.len() as f64;
        if !(mean_exp.is_finite() && mean_exp > 0.0) {
            return Err(MdepError::NonIdentifiedIntercept {
                reason: "mean of exp(xθ) is not finite and positive".into(),
            });
        }
        Ok((self.mean_y / mean_exp).ln())
    }

    /// Residuals written into `out`.
    pub fn residuals_into(&self, theta: &[f64], out: &mut Vec<f64>) -> Result<()> {
        self.check_theta(theta)?;
        let index = self.index(theta);
        out.clear();
        match self.spec.family {
            Family::Linear | Family::LogLinear | Family::FractionalLogit => {
                out.extend(self.transformed.iter().zip(index.iter()).map(|(t, v)| t - v));
            }
            Family::ExpIndex => {
                out.extend(self.transformed.iter().zip(index.iter()).map(|(t, v)| t - v.exp()));
            }
            Family::ImplicitExp => {
                let c = self.implicit_intercept_from_index(&index)?;
                out.extend(
                    self.transformed
                        .iter()
                        .zip(index.iter())
                        .map(|(t, v)| t - (c + v).exp()),
                );
            }
        }
        if let Some(row) = out.iter().position(|v| !v.is_finite()) {
            return Err(MdepError::NonFinite {
                what: "residual",
                row,
            });
        }
        Ok(())
    }

    pub fn residuals(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.data.n());
        self.residuals_into(theta, &mut out)?;
        Ok(out)
    }

    pub fn jacobian(&self, theta: &[f64]) -> Result<JacobianMatrix> {
        self.check_theta(theta)?;
        let n = self.data.n();
        let p = self.spec.p_theta;
        let x = &self.data.x;
        let mut data = vec![0.0; n * p];
        match self.spec.family {
            Family::Linear | Family::LogLinear | Family::FractionalLogit => {
                for i in 0..n {
                    for k in 0..p {
                        data[i * p + k] = -x[(i, k)];
                    }
                }
            }
            Family::ExpIndex => {
                let index = self.index(theta);
                for i in 0..n {
                    let g = index[i].exp();
                    for k in 0..p {
                        data[i * p + k] = -g * x[(i, k)];
                    }
                }
            }
            Family::ImplicitExp => {
                // implicit function theorem applied to Ē_n[y − exp(θ_c + xθ)] = 0
                let index = self.index(theta);
                let c = self.implicit_intercept_from_index(&index)?;
                let g: Vec<f64> = index.iter().map(|v| (c + v).exp()).collect();
                let mean_g = g.iter().sum::<f64>() / n as f64;
                if mean_g.abs() < 1e-12 {
                    return Err(MdepError::SingularIntercept { value: mean_g });
                }
                let mut mean_gx = vec![0.0; p];
                for i in 0..n {
                    for k in 0..p {
                        mean_gx[k] += g[i] * x[(i, k)];
                    }
                }
                for v in &mut mean_gx {
                    *v /= n as f64;
                }
                for i in 0..n {
                    for k in 0..p {
                        data[i * p + k] = -g[i] * x[(i, k)] + g[i] * mean_gx[k] / mean_g;
                    }
                }
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(MdepError::NonFinite {
                what: "jacobian",
                row: pos / p.max(1),
            });
        }
        Ok(JacobianMatrix { n, p, data })
    }
}

/// Disturbances `u_i(θ)`. Differenced-intercept families omit the intercept.
pub fn residuals(spec: &ModelSpec, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    BoundModel::new(*spec, data)?.residuals(theta)
}

/// Analytic Jacobian `∂u_i(θ)/∂θ'`.
pub fn jacobian(spec: &ModelSpec, theta: &[f64], data: &Dataset) -> Result<JacobianMatrix> {
    BoundModel::new(*spec, data)?.jacobian(theta)
}

/// Closed-form intercept `θ_c(θ) = log(Ē_n[y] / Ē_n[exp(xθ)])` of the
/// implicit-intercept exponential family.
pub fn implicit_intercept(spec: &ModelSpec, theta: &[f64], data: &Dataset) -> Result<f64> {
    require_implicit(spec)?;
    BoundModel::new(*spec, data)?.implicit_intercept(theta)
}

/// The same intercept found numerically as the root of
/// `c ↦ Ē_n[y − exp(c + xθ)]`: expand a bracket around zero, then bisect to
/// a width of `1e-12`.
pub fn implicit_intercept_by_root(spec: &ModelSpec, theta: &[f64], data: &Dataset) -> Result<f64> {
    require_implicit(spec)?;
    let model = BoundModel::new(*spec, data)?;
    model.check_theta(theta)?;
    let index = model.index(theta);
    let mean_y = model.mean_y;
    let n = index.len() as f64;
    let f = |c: f64| mean_y - index.iter().map(|v| (c + v).exp()).sum::<f64>() / n;
    if !(mean_y > 0.0) {
        return Err(MdepError::NonIdentifiedIntercept {
            reason: format!("mean outcome {mean_y} is not positive"),
        });
    }
    // f is strictly decreasing in c
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut expansions = 0;
    while !(f(lo) > 0.0 && f(hi) < 0.0) {
        if expansions == 64 {
            return Err(MdepError::NonIdentifiedIntercept {
                reason: "no sign change found while expanding the bracket".into(),
            });
        }
        if f(lo) <= 0.0 {
            lo = lo * 2.0 - 1.0;
        }
        if f(hi) >= 0.0 {
            hi = hi * 2.0 + 1.0;
        }
        expansions += 1;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn require_implicit(spec: &ModelSpec) -> Result<()> {
    if spec.intercept_mode != InterceptMode::Implicit {
        return Err(MdepError::InvalidArgument(format!(
            "the {} family has no implicit intercept",
            spec.family
        )));
    }
    Ok(())
}

/// Intercept reported alongside the slopes.
///
/// Differenced families recentre the disturbances: `θ̂_c = Ē_n[G⁻¹(y) − g(x, θ̂)]`.
/// The implicit family reports `θ_c(θ̂)`.
pub fn recovered_intercept(spec: &ModelSpec, theta_hat: &[f64], data: &Dataset) -> Result<f64> {
    let model = BoundModel::new(*spec, data)?;
    match spec.intercept_mode {
        InterceptMode::Differenced => {
            let u = model.residuals(theta_hat)?;
            Ok(u.iter().sum::<f64>() / u.len() as f64)
        }
        InterceptMode::Implicit => model.implicit_intercept(theta_hat),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(family: Family, n: usize, seed: u64) -> (ModelSpec, Dataset) {
        let mut rng = crate::rng::stream_rng(seed, 0);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let z = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..n)
            .map(|_| match family {
                Family::FractionalLogit => rng.random_range(0.05..0.95),
                Family::Linear => rng.random_range(-2.0..2.0),
                _ => rng.random_range(0.2..3.0),
            })
            .collect();
        (ModelSpec::new(family, 2), Dataset::new(y, x, z).unwrap())
    }

    fn fd_jacobian(spec: &ModelSpec, theta: &[f64], data: &Dataset) -> DMatrix<f64> {
        let p = theta.len();
        let n = data.n();
        let mut out = DMatrix::zeros(n, p);
        for k in 0..p {
            let h = 1e-6 * theta[k].abs().max(1.0);
            let mut up = theta.to_vec();
            let mut dn = theta.to_vec();
            up[k] += h;
            dn[k] -= h;
            let ru = residuals(spec, &up, data).unwrap();
            let rd = residuals(spec, &dn, data).unwrap();
            for i in 0..n {
                out[(i, k)] = (ru[i] - rd[i]) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn linear_at_zero_returns_outcome() {
        let (spec, data) = toy(Family::Linear, 8, 1);
        assert_eq!(residuals(&spec, &[0.0, 0.0], &data).unwrap(), data.y());
    }

    #[test]
    fn noiseless_linear_residuals_vanish() {
        let x = DMatrix::from_row_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y: Vec<f64> = (0..5).map(|i| 1.5 * i as f64).collect();
        let data = Dataset::new(y, x.clone(), x).unwrap();
        let u = residuals(&ModelSpec::new(Family::Linear, 1), &[1.5], &data).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn implicit_toy_intercept_is_log_two() {
        let x = DMatrix::zeros(4, 1);
        let z = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let data = Dataset::new(vec![1.0, 2.0, 3.0, 2.0], x, z).unwrap();
        let spec = ModelSpec::new(Family::ImplicitExp, 1);
        for theta in [0.0, 1.3, -4.0] {
            let c = implicit_intercept(&spec, &[theta], &data).unwrap();
            assert!((c - 2f64.ln()).abs() < 1e-15);
            let u = residuals(&spec, &[theta], &data).unwrap();
            for (ui, yi) in u.iter().zip(data.y()) {
                assert!((ui - (yi - 2.0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn implicit_intercept_at_zero_is_log_mean() {
        let (spec, data) = toy(Family::ImplicitExp, 9, 2);
        let mean = data.y().iter().sum::<f64>() / 9.0;
        let c = implicit_intercept(&spec, &[0.0, 0.0], &data).unwrap();
        assert!((c - mean.ln()).abs() < 1e-14);
    }

    #[test]
    fn root_solve_agrees_with_closed_form() {
        let (spec, data) = toy(Family::ImplicitExp, 15, 3);
        for theta in [[0.3, -0.7], [2.0, 1.0], [-3.0, 0.5]] {
            let a = implicit_intercept(&spec, &theta, &data).unwrap();
            let b = implicit_intercept_by_root(&spec, &theta, &data).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn implicit_intercept_rejects_nonpositive_mean() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let data = Dataset::new(vec![-1.0, -2.0, 0.5, 0.1], x.clone(), x).unwrap();
        let spec = ModelSpec::new(Family::ImplicitExp, 1);
        assert!(matches!(
            implicit_intercept(&spec, &[0.0], &data),
            Err(MdepError::NonIdentifiedIntercept { .. })
        ));
        assert!(matches!(
            implicit_intercept_by_root(&spec, &[0.0], &data),
            Err(MdepError::NonIdentifiedIntercept { .. })
        ));
    }

    #[test]
    fn implicit_residuals_have_zero_mean() {
        let (spec, data) = toy(Family::ImplicitExp, 30, 4);
        let u = residuals(&spec, &[0.8, -1.1], &data).unwrap();
        assert!((u.iter().sum::<f64>() / 30.0).abs() < 1e-10);
    }

    #[test]
    fn link_domain_is_enforced() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let data = Dataset::new(vec![0.5, 0.2, 1.0, 0.3], x.clone(), x.clone()).unwrap();
        let err = residuals(&ModelSpec::new(Family::FractionalLogit, 1), &[0.0], &data);
        assert_eq!(
            err,
            Err(MdepError::LinkDomain {
                family: "fractional-logit",
                row: 2,
                value: 1.0
            })
        );
        let data = Dataset::new(vec![0.5, -0.2, 1.0, 0.3], x.clone(), x).unwrap();
        assert!(matches!(
            residuals(&ModelSpec::new(Family::LogLinear, 1), &[0.0], &data),
            Err(MdepError::LinkDomain { row: 1, .. })
        ));
    }

    #[test]
    fn dataset_rejects_constant_instrument() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        assert_eq!(
            Dataset::new(vec![1.0; 4], x, z),
            Err(MdepError::ConstantInstrument { column: 0 })
        );
    }

    #[test]
    fn intercept_mode_consistency() {
        assert!(ModelSpec::with_intercept_mode(Family::Linear, InterceptMode::Implicit, 1).is_err());
        assert!(ModelSpec::with_intercept_mode(Family::ImplicitExp, InterceptMode::Implicit, 1).is_ok());
    }

    #[test]
    fn linear_jacobian_is_negative_design() {
        let (spec, data) = toy(Family::Linear, 6, 5);
        let j = jacobian(&spec, &[3.0, -2.0], &data).unwrap();
        assert_eq!(j.to_matrix(), -data.x().clone());
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = crate::rng::stream_rng(99, 1);
        for draw in 0..20u64 {
            for family in Family::ALL {
                let (spec, data) = toy(family, 12, 100 + draw);
                let theta = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let analytic = jacobian(&spec, &theta, &data).unwrap().to_matrix();
                let numeric = fd_jacobian(&spec, &theta, &data);
                let scale = numeric.amax().max(1.0);
                let err = (&analytic - &numeric).amax() / scale;
                assert!(err < 1e-5, "{family}: relative error {err}");
            }
        }
    }

    #[test]
    fn recovered_intercept_noiseless() {
        let x = DMatrix::from_row_slice(6, 2, &[0.0, 1.0, 1.0, 0.5, 2.0, -1.0, -1.0, 0.0, 0.5, 2.0, 1.5, 1.0]);
        let y: Vec<f64> = (0..6).map(|i| 2.0 + x[(i, 0)] - x[(i, 1)]).collect();
        let data = Dataset::new(y, x.clone(), x).unwrap();
        let c = recovered_intercept(&ModelSpec::new(Family::Linear, 2), &[1.0, -1.0], &data).unwrap();
        assert!((c - 2.0).abs() < 1e-14);
    }

    #[test]
    fn recovered_intercept_of_centred_residuals_is_zero() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let data = Dataset::new(vec![1.0, -1.0, 2.0, -2.0], x.clone(), x).unwrap();
        let c = recovered_intercept(&ModelSpec::new(Family::Linear, 1), &[0.0], &data).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
            let t = f.transform_outcome(0.3, 0).unwrap();
            assert!((f.outcome_from_transformed(t) - 0.3).abs() < 1e-15);
        }
    }
}
