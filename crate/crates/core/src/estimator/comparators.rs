//! Least-squares comparators: OLS and two-stage least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{MdepError, Result};

/// Largest admissible condition number of a cross-product matrix `A'A`.
pub const CONDITION_LIMIT: f64 = 1e12;

/// `[1, m]`.
pub fn with_intercept(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().insert_column(0, 1.0)
}

/// Condition number of `a'a`, i.e. the squared ratio of extreme singular values of `a`.
fn cross_product_condition(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        (max / min).powi(2)
    }
}

fn guarded_qr(a: &DMatrix<f64>, stage: &'static str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if a.nrows() < a.ncols() {
        return Err(MdepError::RankDeficient {
            stage,
            condition: f64::INFINITY,
        });
    }
    let condition = cross_product_condition(a);
    if !(condition <= CONDITION_LIMIT) {
        return Err(MdepError::RankDeficient { stage, condition });
    }
    let qr = a.clone().qr();
    Ok((qr.q(), qr.r()))
}

fn least_squares(y: &DVector<f64>, a: &DMatrix<f64>, stage: &'static str) -> Result<DVector<f64>> {
    let (q, r) = guarded_qr(a, stage)?;
    let qty = q.transpose() * y;
    r.solve_upper_triangular(&qty).ok_or(MdepError::RankDeficient {
        stage,
        condition: f64::INFINITY,
    })
}

/// Ordinary least squares of `y` on the columns of `xc` (include an intercept
/// column yourself, e.g. with [`with_intercept`]). Solved through a QR
/// factorisation.
pub fn ols_fit(y: &[f64], xc: &DMatrix<f64>) -> Result<DVector<f64>> {
    if y.len() != xc.nrows() {
        return Err(MdepError::DimensionMismatch {
            expected: xc.nrows(),
            found: y.len(),
        });
    }
    least_squares(&DVector::from_column_slice(y), xc, "ordinary least squares")
}

/// Two-stage least squares: project `xc` onto the column space of `zc`, then
/// regress `y` on the projection. Equals `(X'P_Z X)⁻¹ X'P_Z y`.
pub fn tsls_fit(y: &[f64], xc: &DMatrix<f64>, zc: &DMatrix<f64>) -> Result<DVector<f64>> {
    if y.len() != xc.nrows() || zc.nrows() != xc.nrows() {
        return Err(MdepError::DimensionMismatch {
            expected: xc.nrows(),
            found: if y.len() != xc.nrows() { y.len() } else { zc.nrows() },
        });
    }
    let (q, _) = guarded_qr(zc, "first stage")?;
    let projected = &q * (q.transpose() * xc);
    least_squares(&DVector::from_column_slice(y), &projected, "second stage")
}

/// Least-squares coefficients with heteroskedasticity-robust (HC0) standard
/// errors.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
}

/// [`tsls_fit`] with the sandwich `(X̂'X̂)⁻¹ (Σ e_i² x̂_i x̂_i') (X̂'X̂)⁻¹`, where
/// `e = y − Xβ̂` uses the original regressors. Passing `zc = xc` gives OLS.
pub fn tsls_robust(y: &[f64], xc: &DMatrix<f64>, zc: &DMatrix<f64>) -> Result<LeastSquaresFit> {
    let beta = tsls_fit(y, xc, zc)?;
    let (q, _) = guarded_qr(zc, "first stage")?;
    let projected = &q * (q.transpose() * xc);
    let resid = DVector::from_column_slice(y) - xc * &beta;
    let bread = (projected.transpose() * &projected)
        .try_inverse()
        .ok_or(MdepError::RankDeficient {
            stage: "second stage",
            condition: f64::INFINITY,
        })?;
    let k = xc.ncols();
    let mut meat = DMatrix::zeros(k, k);
    for (i, e) in resid.iter().enumerate() {
        let row = projected.row(i);
        meat += row.transpose() * row * (e * e);
    }
    let cov = &bread * meat * &bread;
    Ok(LeastSquaresFit {
        coefficients: beta.iter().copied().collect(),
        std_errors: cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect(),
    })
}
