//! Distance matrices, V- and U-centering, and (partial) distance covariance.
//!
//! All matrices are stored densely in row-major order. For a sample
//! `ξ_1, …, ξ_n` the empirical squared distance covariance with a scalar `u`
//! is
//!
//! ```text
//! V²_n(u, ξ) = (1/n²) Σ_ij ž_ij |u_i − u_j|
//! ```
//!
//! where `ž` is the doubly centred distance matrix of `ξ`. The same value is
//! available through the three-sum decomposition `S₁ + S₂ − 2S₃`
//! ([`dcov_sq_abc`]), which never forms `ž` and serves as an independent
//! cross-check.

use nalgebra::DMatrix;

use crate::error::{MdepError, Result};

/// Largest sample size for which dense `n × n` matrices are built by default.
pub const DEFAULT_MAX_N: usize = 20_000;

/// Euclidean distances `‖ξ_i − ξ_j‖` between the rows of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }
}

/// Doubly centred distance matrix `ž` with its cached row means and grand mean.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredDistanceMatrix {
    n: usize,
    zcheck: Vec<f64>,
    row_means: Vec<f64>,
    grand_mean: f64,
}

impl CenteredDistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.zcheck[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.zcheck[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.zcheck
    }

    /// Row means of the uncentred distance matrix.
    pub fn row_means(&self) -> &[f64] {
        &self.row_means
    }

    /// Grand mean of the uncentred distance matrix.
    pub fn grand_mean(&self) -> f64 {
        self.grand_mean
    }

    /// True when every weight is zero, i.e. all sample rows coincide.
    pub fn is_zero(&self) -> bool {
        self.zcheck.iter().all(|&w| w == 0.0)
    }
}

/// U-centred distance matrix (zero diagonal, divisors `n − 2` and
/// `(n − 1)(n − 2)`), the building block of partial distance covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct UCenteredMatrix {
    n: usize,
    m: Vec<f64>,
}

impl UCenteredMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.m
    }

    /// Frobenius inner product `Σ_ij A_ij B_ij`.
    pub fn dot(&self, other: &UCenteredMatrix) -> Result<f64> {
        check_len(self.n, other.n)?;
        Ok(frobenius(&self.m, &other.m))
    }
}

fn frobenius(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(MdepError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Pairwise Euclidean distances between the rows of `samples` (`n × d`).
pub fn pairwise_distances(samples: &DMatrix<f64>) -> Result<DistanceMatrix> {
    pairwise_distances_with_limit(samples, DEFAULT_MAX_N)
}

/// As [`pairwise_distances`] with an explicit cap on the sample size.
pub fn pairwise_distances_with_limit(
    samples: &DMatrix<f64>,
    max_n: usize,
) -> Result<DistanceMatrix> {
    let (n, dim) = samples.shape();
    if n < 2 {
        return Err(MdepError::TooFewObservations {
            required: 2,
            found: n,
        });
    }
    if n > max_n {
        return Err(MdepError::SampleTooLarge { n, limit: max_n });
    }
    // row-major copy so that each row is contiguous
    let mut rows = vec![0.0; n * dim];
    for i in 0..n {
        for k in 0..dim {
            let v = samples[(i, k)];
            if !v.is_finite() {
                return Err(MdepError::NonFinite {
                    what: "distance sample",
                    row: i,
                });
            }
            rows[i * dim + k] = v;
        }
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let ri = &rows[i * dim..(i + 1) * dim];
        for j in (i + 1)..n {
            let rj = &rows[j * dim..(j + 1) * dim];
            let dist = if dim == 1 {
                (ri[0] - rj[0]).abs()
            } else {
                ri.iter()
                    .zip(rj)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            };
            d[i * n + j] = dist;
            d[j * n + i] = dist;
        }
    }
    Ok(DistanceMatrix { n, d })
}

/// Distances of a scalar sample.
pub fn pairwise_distances_1d(values: &[f64]) -> Result<DistanceMatrix> {
    pairwise_distances(&DMatrix::from_column_slice(values.len(), 1, values))
}

/// Double-centre a distance matrix:
/// `ž_ij = d_ij − d̄_i· − d̄_·j + d̄_··`.
pub fn v_center(dm: &DistanceMatrix) -> CenteredDistanceMatrix {
    let n = dm.n;
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| dm.row(i).iter().sum::<f64>() / nf).collect();
    let grand_mean = row_means.iter().sum::<f64>() / nf;
    let mut zcheck = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            // symmetric distances give identical row and column means
            let w = dm.get(i, j) - row_means[i] - row_means[j] + grand_mean;
            zcheck[i * n + j] = w;
            zcheck[j * n + i] = w;
        }
    }
    CenteredDistanceMatrix {
        n,
        zcheck,
        row_means,
        grand_mean,
    }
}

/// U-centre a distance matrix. Requires `n ≥ 4`.
pub fn u_center(dm: &DistanceMatrix) -> Result<UCenteredMatrix> {
    let n = dm.n;
    if n < 4 {
        return Err(MdepError::TooFewObservations {
            required: 4,
            found: n,
        });
    }
    let nf = n as f64;
    let row_sums: Vec<f64> = (0..n).map(|i| dm.row(i).iter().sum()).collect();
    let total: f64 = row_sums.iter().sum();
    let grand = total / ((nf - 1.0) * (nf - 2.0));
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let w = dm.get(i, j) - (row_sums[i] + row_sums[j]) / (nf - 2.0) + grand;
            m[i * n + j] = w;
            m[j * n + i] = w;
        }
    }
    Ok(UCenteredMatrix { n, m })
}

/// `(1/n²) Σ_ij ž_ij |u_i − u_j|`.
///
/// For genuine samples the value is non-negative up to rounding. When `u` is
/// an arbitrary direction (e.g. `X(θ − θ₀)` in an identification check) the
/// weights can make it negative; that value is returned unchanged.
pub fn dcov_sq(u: &[f64], zc: &CenteredDistanceMatrix) -> Result<f64> {
    check_len(zc.n, u.len())?;
    if let Some(row) = u.iter().position(|v| !v.is_finite()) {
        return Err(MdepError::NonFinite {
            what: "residual",
            row,
        });
    }
    Ok(weighted_abs_pair_sum(u, zc))
}

/// Unchecked kernel of [`dcov_sq`]; the diagonal contributes nothing, so only
/// the upper triangle is visited.
#[inline]
pub(crate) fn weighted_abs_pair_sum(u: &[f64], zc: &CenteredDistanceMatrix) -> f64 {
    let n = zc.n;
    let mut total = 0.0;
    for i in 0..n {
        let ui = u[i];
        let w = &zc.row(i)[i + 1..];
        let uj = &u[i + 1..];
        let mut acc = 0.0;
        for (wk, vk) in w.iter().zip(uj) {
            acc += wk * (ui - vk).abs();
        }
        total += acc;
    }
    2.0 * total / (n as f64 * n as f64)
}

/// `S₁ + S₂ − 2S₃` computed directly from `u` and the rows of `z`, without
/// centring.
pub fn dcov_sq_abc(u: &[f64], z: &DMatrix<f64>) -> Result<f64> {
    let n = u.len();
    check_len(n, z.nrows())?;
    if n == 0 {
        return Err(MdepError::TooFewObservations {
            required: 1,
            found: 0,
        });
    }
    let nf = n as f64;
    let dist = |i: usize, j: usize| -> f64 {
        (0..z.ncols())
            .map(|k| {
                let t = z[(i, k)] - z[(j, k)];
                t * t
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut s1 = 0.0;
    let mut abs_row = vec![0.0; n];
    let mut dist_row = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let a = (u[i] - u[j]).abs();
            let b = dist(i, j);
            s1 += a * b;
            abs_row[i] += a;
            dist_row[i] += b;
        }
    }
    let abs_total: f64 = abs_row.iter().sum();
    let dist_total: f64 = dist_row.iter().sum();
    let s1 = s1 / (nf * nf);
    let s2 = (abs_total / (nf * nf)) * (dist_total / (nf * nf));
    // Σ_ijk |u_i − u_j| ‖z_i − z_k‖ factorises over i
    let s3 = abs_row
        .iter()
        .zip(&dist_row)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / (nf * nf * nf);
    Ok(s1 + s2 - 2.0 * s3)
}

/// Partial distance covariance of `x2` and `z2` after netting out `x1`:
/// `(1/(n(n−3))) P⊥(x2) · P⊥(z2)` where `P⊥` projects U-centred matrices
/// orthogonally to the U-centred matrix of `x1`.
pub fn pdcov(x2: &[f64], z2: &DMatrix<f64>, x1: &DMatrix<f64>) -> Result<f64> {
    let n = x2.len();
    check_len(n, z2.nrows())?;
    check_len(n, x1.nrows())?;
    let mx2 = u_center(&pairwise_distances_1d(x2)?)?;
    let mz2 = u_center(&pairwise_distances(z2)?)?;
    let mx1 = u_center(&pairwise_distances(x1)?)?;
    pdcov_from_u(&mx2, &mz2, &mx1)
}

/// [`pdcov`] on already U-centred matrices.
pub fn pdcov_from_u(
    mx2: &UCenteredMatrix,
    mz2: &UCenteredMatrix,
    mx1: &UCenteredMatrix,
) -> Result<f64> {
    let n = mx2.n;
    check_len(n, mz2.n)?;
    check_len(n, mx1.n)?;
    let px2 = project_out(mx2, mx1);
    let pz2 = project_out(mz2, mx1);
    let nf = n as f64;
    Ok(frobenius(&px2, &pz2) / (nf * (nf - 3.0)))
}

/// `A − (A·C / C·C) C`; the projection term vanishes when `C·C = 0`.
fn project_out(a: &UCenteredMatrix, c: &UCenteredMatrix) -> Vec<f64> {
    let cc = frobenius(&c.m, &c.m);
    if cc == 0.0 {
        return a.m.clone();
    }
    let coef = frobenius(&a.m, &c.m) / cc;
    a.m.iter().zip(&c.m).map(|(x, y)| x - coef * y).collect()
}

/// Precomputed pieces for repeatedly evaluating `pdC_n(x2, z2; x1)` with a
/// fixed `(z2, x1)` and varying `x2`, as in the wild bootstrap.
///
/// Because `P⊥(z2)` is itself U-centred and orthogonal to `𝓜^{x1}`, the
/// statistic reduces to `Σ_{i≠j} |x2_i − x2_j| P⊥(z2)_ij / (n(n−3))`.
#[derive(Debug, Clone)]
pub struct PartialDcovContext {
    n: usize,
    projected_z2: Vec<f64>,
}

impl PartialDcovContext {
    pub fn new(z2: &DMatrix<f64>, x1: &DMatrix<f64>) -> Result<Self> {
        let n = z2.nrows();
        check_len(n, x1.nrows())?;
        let mz2 = u_center(&pairwise_distances(z2)?)?;
        let mx1 = u_center(&pairwise_distances(x1)?)?;
        Ok(Self {
            n,
            projected_z2: project_out(&mz2, &mx1),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// True when the projected instrument matrix is identically zero, in which
    /// case every statistic is exactly zero.
    pub fn is_degenerate(&self) -> bool {
        self.projected_z2.iter().all(|&v| v == 0.0)
    }

    pub fn statistic(&self, x2: &[f64]) -> Result<f64> {
        check_len(self.n, x2.len())?;
        let n = self.n;
        let mut total = 0.0;
        for i in 0..n {
            let row = &self.projected_z2[i * n + i + 1..(i + 1) * n];
            let xi = x2[i];
            total += row
                .iter()
                .zip(&x2[i + 1..])
                .map(|(p, xj)| p * (xi - xj).abs())
                .sum::<f64>();
        }
        let nf = n as f64;
        Ok(2.0 * total / (nf * (nf - 3.0)))
    }
}
