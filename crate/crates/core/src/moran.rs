//! Moran's I on regression residuals and its standardized form.
//!
//! `m = u'Wu / u'u` with `u = M_X y`. Under the regression null the exact
//! moments are
//!
//! ```text
//! E[m]   = tr(M W M) / (n - k)
//! var(m) = 2 ((n - k) tr((M W M)^2) - tr(M W M)^2) / ((n - k)^2 (n - k + 2))
//! ```
//!
//! Both traces are computed from a thin orthonormal basis `Q` of col(X)
//! without forming the n×n projector:
//! `tr(MWM) = tr(W) - tr(Q'WQ)` and
//! `tr((MWM)^2) = ||W||_F^2 - 2 ||WQ||_F^2 + ||Q'WQ||_F^2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EsfError, Result};
use crate::linalg::OrthoBasis;
use crate::weights::SpatialWeights;

/// Residuals smaller than this fraction of the response count as zero.
const ROUNDOFF_RESIDUAL: f64 = 1e-12;

/// Applies the residual-maker `M_X = I - X (X'X)^{-1} X'`.
#[derive(Debug, Clone)]
pub struct ResidualMaker {
    basis: OrthoBasis,
}

impl ResidualMaker {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            basis: OrthoBasis::new(x)?,
        })
    }

    pub fn from_basis(basis: OrthoBasis) -> Self {
        Self { basis }
    }

    pub fn k(&self) -> usize {
        self.basis.rank()
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &OrthoBasis {
        &self.basis
    }

    pub fn residuals(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.n() {
            return Err(EsfError::DimensionMismatch {
                what: "response length vs design rows",
                expected: self.n(),
                got: y.len(),
            });
        }
        Ok(self.basis.annihilate(y))
    }

    /// Explicit projector; only needed by tests and small diagnostics.
    pub fn projector(&self) -> DMatrix<f64> {
        let n = self.n();
        self.basis.annihilate_matrix(&DMatrix::identity(n, n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    pub m: f64,
    pub expected_m: f64,
    pub variance_m: f64,
    pub z: f64,
    pub n: usize,
    pub k: usize,
}

/// Null moments of Moran's I for a fixed design and weights matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoranMoments {
    pub expected: f64,
    pub variance: f64,
    pub n: usize,
    pub k: usize,
}

impl MoranMoments {
    pub fn new(maker: &ResidualMaker, w: &SpatialWeights) -> Result<Self> {
        let n = maker.n();
        let k = maker.k();
        if w.n() != n {
            return Err(EsfError::DimensionMismatch {
                what: "weights dimension vs observations",
                expected: n,
                got: w.n(),
            });
        }
        if n <= k + 2 {
            return Err(EsfError::UndefinedMoran(format!(
                "need n > k + 2 for the variance, got n = {n}, k = {k}"
            )));
        }
        let wm = w.values();
        let q = maker.basis().q();
        let wq = wm * q;
        let qwq = q.tr_mul(&wq);
        let t1 = wm.trace() - qwq.trace();
        let t2 = wm.norm_squared() - 2.0 * wq.norm_squared() + qwq.norm_squared();
        let dof = (n - k) as f64;
        let expected = t1 / dof;
        let variance = 2.0 * (dof * t2 - t1 * t1) / (dof * dof * (dof + 2.0));
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(EsfError::UndefinedMoran(format!(
                "non-positive variance {variance:e}"
            )));
        }
        Ok(Self {
            expected,
            variance,
            n,
            k,
        })
    }

    /// Standardize the Moran's I of an arbitrary residual vector.
    pub fn standardize(&self, residuals: &DVector<f64>, w: &SpatialWeights) -> Result<MoranResult> {
        let m = moran_i(residuals, w)?;
        Ok(MoranResult {
            m,
            expected_m: self.expected,
            variance_m: self.variance,
            z: (m - self.expected) / self.variance.sqrt(),
            n: self.n,
            k: self.k,
        })
    }
}

/// Rayleigh quotient `u'Wu / u'u`.
pub fn moran_i(residuals: &DVector<f64>, w: &SpatialWeights) -> Result<f64> {
    if residuals.len() != w.n() {
        return Err(EsfError::DimensionMismatch {
            what: "residual length vs weights dimension",
            expected: w.n(),
            got: residuals.len(),
        });
    }
    let denom = residuals.norm_squared();
    if denom == 0.0 {
        return Err(EsfError::ZeroResiduals);
    }
    let wu = w.values() * residuals;
    Ok(residuals.dot(&wu) / denom)
}

/// Moran's I of `M_X y` with exact null moments and the standardized `Z`.
pub fn standardized_moran(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    w: &SpatialWeights,
) -> Result<MoranResult> {
    let maker = ResidualMaker::new(x)?;
    standardized_moran_with(&maker, y, w)
}

pub fn standardized_moran_with(
    maker: &ResidualMaker,
    y: &DVector<f64>,
    w: &SpatialWeights,
) -> Result<MoranResult> {
    let moments = MoranMoments::new(maker, w)?;
    let u = maker.residuals(y)?;
    // y inside col(X): the residual is round-off and m is meaningless
    if u.norm() <= ROUNDOFF_RESIDUAL * y.norm() {
        return Err(EsfError::ZeroResiduals);
    }
    moments.standardize(&u, w)
}
