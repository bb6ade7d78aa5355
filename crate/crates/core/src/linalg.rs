//! Dense least-squares helpers shared by the Moran, Lasso and estimator code.

use nalgebra::{DMatrix, DVector};

use crate::error::{EsfError, Result};

/// Relative size of a QR diagonal entry below which a column counts as
/// dependent on the columns before it.
pub const RANK_TOL: f64 = 1e-9;

/// Thin QR factorization of a full-column-rank design matrix.
///
/// `q` has orthonormal columns spanning col(X); the annihilator
/// `M_X = I - q q'` is applied implicitly.
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl OrthoBasis {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        let (n, k) = x.shape();
        if k == 0 {
            return Ok(Self {
                q: DMatrix::zeros(n, 0),
                r: DMatrix::zeros(0, 0),
            });
        }
        if n < k {
            return Err(EsfError::RankDeficient { column: n });
        }
        let qr = x.clone().qr();
        let r = qr.r();
        for j in 0..k {
            let col_norm = x.column(j).norm();
            if col_norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * col_norm {
                return Err(EsfError::RankDeficient { column: j });
            }
        }
        Ok(Self { q: qr.q(), r })
    }

    pub fn nrows(&self) -> usize {
        self.q.nrows()
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `M_X v`.
    pub fn annihilate(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.rank() == 0 {
            return v.clone();
        }
        let coef = self.q.tr_mul(v);
        v - &self.q * coef
    }

    /// `M_X A`, column by column.
    pub fn annihilate_matrix(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        if self.rank() == 0 {
            return a.clone();
        }
        let coef = self.q.tr_mul(a);
        a - &self.q * coef
    }

    /// Least-squares coefficients `(X'X)^{-1} X' y`.
    pub fn coefficients(&self, y: &DVector<f64>) -> DVector<f64> {
        let qty = self.q.tr_mul(y);
        self.r
            .solve_upper_triangular(&qty)
            .expect("R has a nonzero diagonal by construction")
    }

    /// `(X'X)^{-1} = R^{-1} R^{-T}`.
    pub fn gram_inverse(&self) -> DMatrix<f64> {
        let k = self.rank();
        let r_inv = self
            .r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .expect("R has a nonzero diagonal by construction");
        &r_inv * r_inv.transpose()
    }
}

/// Ordinary least squares fit with classical and HC1 standard errors.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub se_plain: DVector<f64>,
    pub se_robust: DVector<f64>,
    pub rss: f64,
    pub df_resid: usize,
}

pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    if x.nrows() != y.len() {
        return Err(EsfError::DimensionMismatch {
            what: "response length vs design rows",
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let basis = OrthoBasis::new(x)?;
    ols_with_basis(x, y, &basis)
}

pub(crate) fn ols_with_basis(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &OrthoBasis,
) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(EsfError::InvalidInput(format!(
            "OLS needs more observations ({n}) than regressors ({k})"
        )));
    }
    let coefficients = basis.coefficients(y);
    let residuals = y - x * &coefficients;
    let rss = residuals.norm_squared();
    let df_resid = n - k;
    let sigma2 = rss / df_resid as f64;
    let bread = basis.gram_inverse();
    let se_plain = bread.diagonal().map(|v| (sigma2 * v).max(0.0).sqrt());

    // HC1: (X'X)^-1 X' diag(u^2) X (X'X)^-1 * n/(n-k)
    let mut scaled = x.clone();
    for (mut row, u) in scaled.row_iter_mut().zip(residuals.iter()) {
        row *= *u;
    }
    let meat = scaled.tr_mul(&scaled);
    let sandwich = &bread * meat * &bread * (n as f64 / df_resid as f64);
    let se_robust = sandwich.diagonal().map(|v| v.max(0.0).sqrt());

    Ok(OlsFit {
        coefficients,
        residuals,
        se_plain,
        se_robust,
        rss,
        df_resid,
    })
}

/// Greedy column filter: walks `candidates` in order and keeps each column
/// of `e` that is not (numerically) in the span of `x` and the columns kept
/// so far. Returns the kept and dropped candidate positions.
pub fn independent_columns(
    x: &DMatrix<f64>,
    e: &DMatrix<f64>,
    candidates: &[usize],
) -> Result<(Vec<usize>, Vec<usize>)> {
    let base = OrthoBasis::new(x)?;
    let n = x.nrows();
    let mut q: Vec<DVector<f64>> = base.q().column_iter().map(|c| c.into_owned()).collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for &c in candidates {
        let v = e.column(c).into_owned();
        let norm = v.norm();
        let mut r = v;
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for qi in &q {
                let d = qi.dot(&r);
                r.axpy(-d, qi, 1.0);
            }
        }
        let rn = r.norm();
        if norm == 0.0 || rn <= RANK_TOL * norm || q.len() >= n {
            dropped.push(c);
        } else {
            q.push(r / rn);
            kept.push(c);
        }
    }
    Ok((kept, dropped))
}

/// Horizontally concatenate `x` with the listed columns of `e`.
pub fn hstack_columns(x: &DMatrix<f64>, e: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let n = x.nrows();
    let k = x.ncols();
    let mut out = DMatrix::zeros(n, k + cols.len());
    out.columns_mut(0, k).copy_from(x);
    for (slot, &c) in cols.iter().enumerate() {
        out.column_mut(k + slot).copy_from(&e.column(c));
    }
    out
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(v: &DVector<f64>) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.mean();
    (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Median of a slice; `NaN` when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}
