//! Spatial weights matrices and their spectral decomposition.
//!
//! Weights are stored dense and symmetric. The eigenvectors of `W` are the
//! candidate regressors for spatial filtering; because `W^p = E Λ^p E'`, the
//! same basis also spans every higher-order lag of `W`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EsfError, Result};
use crate::seed;

/// Maximum number of full redraws when a Bernoulli draw leaves a unit isolated.
pub const MAX_REDRAWS: usize = 1000;

/// Tolerance on `|w_ij - w_ji|` when accepting user-supplied weights.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    MaxRowSum,
    SpectralRadius,
}

/// Symmetric, non-negative weights with zero diagonal and no isolated units.
#[derive(Debug, Clone)]
pub struct SpatialWeights {
    values: DMatrix<f64>,
    normalization: Normalization,
    norm_factor: f64,
}

impl SpatialWeights {
    /// Validate a dense raw matrix.
    ///
    /// Entries mirrored across the diagonal may differ by at most
    /// [`SYMMETRY_TOL`]; the stored matrix is made exactly symmetric.
    pub fn from_dense(values: DMatrix<f64>) -> Result<Self> {
        Self::with_normalization(values, Normalization::Raw, 1.0)
    }

    /// Validate a matrix that has already been scaled by `norm_factor`.
    pub fn with_normalization(
        mut values: DMatrix<f64>,
        normalization: Normalization,
        norm_factor: f64,
    ) -> Result<Self> {
        let (n, m) = values.shape();
        if n != m {
            return Err(EsfError::DimensionMismatch {
                what: "weights must be square",
                expected: n,
                got: m,
            });
        }
        if n == 0 {
            return Err(EsfError::InvalidInput("weights matrix is empty".into()));
        }
        if !(norm_factor.is_finite() && norm_factor > 0.0) {
            return Err(EsfError::InvalidInput(format!(
                "normalization factor must be positive, got {norm_factor}"
            )));
        }
        for j in 0..n {
            for i in 0..n {
                let w = values[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(EsfError::InvalidInput(format!(
                        "weight w[{i}][{j}] = {w} must be finite and non-negative"
                    )));
                }
            }
            if values[(j, j)] != 0.0 {
                return Err(EsfError::InvalidInput(format!(
                    "diagonal entry w[{j}][{j}] = {} must be zero",
                    values[(j, j)]
                )));
            }
        }
        for j in 0..n {
            for i in (j + 1)..n {
                let diff = (values[(i, j)] - values[(j, i)]).abs();
                if diff > SYMMETRY_TOL {
                    return Err(EsfError::Asymmetric { i, j, diff });
                }
                let avg = 0.5 * (values[(i, j)] + values[(j, i)]);
                values[(i, j)] = avg;
                values[(j, i)] = avg;
            }
        }
        if values.iter().all(|&w| w == 0.0) {
            return Err(EsfError::DegenerateWeights);
        }
        if let Some(i) = row_sums(&values).iter().position(|&s| s <= 0.0) {
            return Err(EsfError::IsolatedUnit(i));
        }
        Ok(Self {
            values,
            normalization,
            norm_factor,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn norm_factor(&self) -> f64 {
        self.norm_factor
    }

    pub fn row_sums(&self) -> Vec<f64> {
        row_sums(&self.values)
    }

    /// Divide every entry by the largest row sum.
    ///
    /// For symmetric `W` the largest row sum equals the largest column sum,
    /// so a single scalar keeps the matrix symmetric and bounds the spectral
    /// radius by one.
    pub fn normalize_max_row_sum(self) -> Result<Self> {
        if self.normalization != Normalization::Raw {
            return Err(EsfError::AlreadyNormalized);
        }
        let factor = self.row_sums().into_iter().fold(0.0, f64::max);
        let values = self.values / factor;
        Ok(Self {
            values,
            normalization: Normalization::MaxRowSum,
            norm_factor: factor,
        })
    }

    /// Divide every entry by the spectral radius (largest |eigenvalue|).
    pub fn normalize_spectral_radius(self) -> Result<Self> {
        if self.normalization != Normalization::Raw {
            return Err(EsfError::AlreadyNormalized);
        }
        let basis = EigenBasis::from_symmetric(&self.values, 1.0)?;
        let factor = basis.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let values = self.values / factor;
        Ok(Self {
            values,
            normalization: Normalization::SpectralRadius,
            norm_factor: factor,
        })
    }

    /// Raw (unnormalized) matrix recovered by undoing the scalar divisor.
    pub fn raw_values(&self) -> DMatrix<f64> {
        &self.values * self.norm_factor
    }
}

fn row_sums(values: &DMatrix<f64>) -> Vec<f64> {
    values.row_iter().map(|r| r.sum()).collect()
}

/// Random symmetric binary weights: each upper-triangle link is an
/// independent Bernoulli(mu / n) draw, mirrored below the diagonal.
///
/// A draw with an isolated unit is discarded in full and redrawn from the
/// next substream `(seed, attempt)`.
pub fn build_bernoulli_swm(n: usize, mu: f64, seed: u64) -> Result<SpatialWeights> {
    if n < 2 {
        return Err(EsfError::InvalidInput(format!("need at least 2 units, got {n}")));
    }
    if !(mu > 0.0 && mu <= n as f64) {
        return Err(EsfError::InvalidInput(format!(
            "expected degree mu = {mu} must lie in (0, n] with n = {n}"
        )));
    }
    let p = mu / n as f64;
    for attempt in 0..MAX_REDRAWS {
        let mut rng = seed::stream(seed, &[attempt as u64]);
        let mut values = DMatrix::zeros(n, n);
        for j in 1..n {
            for i in 0..j {
                if rng.random::<f64>() < p {
                    values[(i, j)] = 1.0;
                    values[(j, i)] = 1.0;
                }
            }
        }
        if row_sums(&values).iter().all(|&s| s > 0.0) {
            return SpatialWeights::from_dense(values);
        }
    }
    Err(EsfError::RedrawExhausted {
        n,
        mu,
        attempts: MAX_REDRAWS,
    })
}

/// Orthonormal eigenvectors and eigenvalues of a symmetric weights matrix,
/// sorted by eigenvalue in descending order (ties keep their original order).
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
    pub source_norm_factor: f64,
}

impl EigenBasis {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Decompose any symmetric matrix; used directly for matrices that are
    /// not valid weights (e.g. the zero matrix).
    pub fn from_symmetric(m: &DMatrix<f64>, source_norm_factor: f64) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(EsfError::DimensionMismatch {
                what: "matrix must be square",
                expected: n,
                got: m.ncols(),
            });
        }
        let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0).ok_or_else(|| {
            EsfError::Decomposition(format!(
                "symmetric QR iteration did not converge (n = {n}, max |w| = {:e}, frobenius = {:e})",
                m.amax(),
                m.norm()
            ))
        })?;
        if eig.eigenvalues.iter().any(|v| !v.is_finite())
            || eig.eigenvectors.iter().any(|v| !v.is_finite())
        {
            return Err(EsfError::Decomposition(format!(
                "non-finite eigenpairs (n = {n}, frobenius = {:e})",
                m.norm()
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        // stable sort keeps index order among ties
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut vectors = DMatrix::zeros(n, n);
        let mut values = DVector::zeros(n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.column_mut(dst).copy_from(&eig.eigenvectors.column(src));
            values[dst] = eig.eigenvalues[src];
        }
        Ok(Self {
            vectors,
            values,
            source_norm_factor,
        })
    }

    /// `E diag(λ^p) E'`.
    pub fn matrix_power(&self, p: u32) -> DMatrix<f64> {
        let powered = self.values.map(|l| l.powi(p as i32));
        let mut scaled = self.vectors.clone();
        for (mut col, lp) in scaled.column_iter_mut().zip(powered.iter()) {
            col *= *lp;
        }
        scaled * self.vectors.transpose()
    }

    /// Indices of eigenvectors with positive eigenvalue (round-off level
    /// values relative to the spectral radius count as zero).
    pub fn positive_indices(&self) -> Vec<usize> {
        let floor = 1e-12 * self.values.amax();
        (0..self.n()).filter(|&i| self.values[i] > floor).collect()
    }
}

/// Full symmetric eigendecomposition `W = E Λ E'`.
pub fn decompose(w: &SpatialWeights) -> Result<EigenBasis> {
    EigenBasis::from_symmetric(w.values(), w.norm_factor())
}

/// `W^p` computed through the eigenbasis.
pub fn matrix_power_via_basis(basis: &EigenBasis, p: u32) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(EsfError::InvalidInput("matrix power must be at least 1".into()));
    }
    Ok(basis.matrix_power(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            let j = (i + 1) % n;
            w[(i, j)] = 1.0;
            w[(j, i)] = 1.0;
        }
        w
    }

    #[test]
    fn bernoulli_full_density_is_complete_graph() {
        let w = build_bernoulli_swm(4, 4.0, 3).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 0.0 } else { 1.0 };
                assert_eq!(w.values()[(i, j)], expect);
            }
        }
        assert_eq!(w.normalization(), Normalization::Raw);
    }

    #[test]
    fn two_units_end_up_linked() {
        for seed in 0..20 {
            let w = build_bernoulli_swm(2, 1.0, seed).unwrap();
            assert_eq!(w.values()[(0, 1)], 1.0);
            assert_eq!(w.values()[(1, 0)], 1.0);
        }
    }

    #[test]
    fn bernoulli_mean_degree_concentrates() {
        for seed in 0..100 {
            let w = build_bernoulli_swm(100, 8.0, seed).unwrap();
            let mean = w.row_sums().iter().sum::<f64>() / 100.0;
            assert!((6.5..=9.5).contains(&mean), "seed {seed}: mean degree {mean}");
        }
    }

    #[test]
    fn bernoulli_is_reproducible() {
        let a = build_bernoulli_swm(60, 5.0, 11).unwrap();
        let b = build_bernoulli_swm(60, 5.0, 11).unwrap();
        assert_eq!(a.values(), b.values());
        let c = build_bernoulli_swm(60, 5.0, 12).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn sparse_graphs_exhaust_redraws() {
        let err = build_bernoulli_swm(400, 0.01, 1).unwrap_err();
        assert!(matches!(err, EsfError::RedrawExhausted { .. }));
    }

    #[test]
    fn cycle_normalizes_to_half() {
        let w = SpatialWeights::from_dense(ring(4)).unwrap();
        let w = w.normalize_max_row_sum().unwrap();
        assert_eq!(w.norm_factor(), 2.0);
        assert_eq!(w.values()[(0, 1)], 0.5);
        assert_eq!(w.values()[(0, 2)], 0.0);
        assert!(matches!(
            w.normalize_max_row_sum(),
            Err(EsfError::AlreadyNormalized)
        ));
    }

    #[test]
    fn uneven_rows_divide_by_largest() {
        // path 0-1-2 with weights giving row sums {1, 3, 2}
        let w = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 2.0, 0.0]);
        let w = SpatialWeights::from_dense(w).unwrap();
        assert_eq!(w.row_sums(), vec![1.0, 3.0, 2.0]);
        let w = w.normalize_max_row_sum().unwrap();
        assert_eq!(w.norm_factor(), 3.0);
        assert!((w.values()[(1, 2)] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_matrices() {
        let mut asym = ring(4);
        asym[(0, 1)] = 2.0;
        assert!(matches!(
            SpatialWeights::from_dense(asym),
            Err(EsfError::Asymmetric { .. })
        ));
        let mut diag = ring(4);
        diag[(2, 2)] = 1.0;
        assert!(SpatialWeights::from_dense(diag).is_err());
        assert!(matches!(
            SpatialWeights::from_dense(DMatrix::zeros(3, 3)),
            Err(EsfError::DegenerateWeights)
        ));
        let mut isolated = DMatrix::zeros(3, 3);
        isolated[(0, 1)] = 1.0;
        isolated[(1, 0)] = 1.0;
        assert!(matches!(
            SpatialWeights::from_dense(isolated),
            Err(EsfError::IsolatedUnit(2))
        ));
    }

    #[test]
    fn exchange_matrix_spectrum() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let basis = decompose(&SpatialWeights::from_dense(w).unwrap()).unwrap();
        assert!((basis.values[0] - 1.0).abs() < 1e-14);
        assert!((basis.values[1] + 1.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let e0 = basis.vectors.column(0);
        let e1 = basis.vectors.column(1);
        assert!((e0[0].abs() - s).abs() < 1e-14 && (e0[0] - e0[1]).abs() < 1e-14);
        assert!((e1[0].abs() - s).abs() < 1e-14 && (e1[0] + e1[1]).abs() < 1e-14);
    }

    #[test]
    fn zero_matrix_reconstructs() {
        let z = DMatrix::zeros(3, 3);
        let basis = EigenBasis::from_symmetric(&z, 1.0).unwrap();
        assert!(basis.values.amax() < 1e-15);
        assert!(basis.matrix_power(1).amax() < 1e-15);
        let gram = basis.vectors.tr_mul(&basis.vectors);
        assert!((gram - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn power_zero_is_rejected() {
        let basis = EigenBasis::from_symmetric(&ring(4), 1.0).unwrap();
        assert!(matrix_power_via_basis(&basis, 0).is_err());
    }

    #[test]
    fn normalized_spectrum_within_unit_interval() {
        let w = build_bernoulli_swm(50, 6.0, 5)
            .unwrap()
            .normalize_max_row_sum()
            .unwrap();
        let basis = decompose(&w).unwrap();
        assert!(basis.values.iter().all(|l| l.abs() <= 1.0 + 1e-12));
        let sorted = basis.values.as_slice().windows(2).all(|p| p[0] >= p[1]);
        assert!(sorted);
    }

    #[test]
    fn spectral_normalization_has_unit_radius() {
        let w = build_bernoulli_swm(30, 5.0, 2)
            .unwrap()
            .normalize_spectral_radius()
            .unwrap();
        let basis = decompose(&w).unwrap();
        let radius = basis.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!((radius - 1.0).abs() < 1e-12);
    }
}
