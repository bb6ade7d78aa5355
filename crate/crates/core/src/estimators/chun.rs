use std::time::Instant;

use super::{check_inputs, Dataset, EstimationReport, Method, ReportBuilder};
use crate::error::{EsfError, Result};
use crate::moran::{standardized_moran_with, ResidualMaker};
use crate::weights::{EigenBasis, SpatialWeights};

/// Chun et al.'s simulation-fitted eigenvector count for Moran's I `m` and
/// `n_pos` positive-eigenvalue eigenvectors, before rounding.
pub fn chun_target(m: f64, n_pos: usize) -> Result<f64> {
    if !(m > -0.6) || !m.is_finite() {
        return Err(EsfError::ChunDomain(m));
    }
    if n_pos == 0 {
        return Err(EsfError::InvalidInput("n_pos must be at least 1".into()));
    }
    let np = n_pos as f64;
    let a = (m + 0.6).powf(0.1742);
    let expo = 2.1480 - 6.1808 * a / np.powf(0.1298) + 3.3534 / a;
    Ok(np / (1.0 + expo.exp()))
}

/// [`chun_target`] rounded to the nearest integer and clamped to `n_pos`.
pub fn chun_candidate_count(m: f64, n_pos: usize) -> Result<usize> {
    let w = chun_target(m, n_pos)?;
    Ok((w.round().max(0.0) as usize).min(n_pos))
}

/// Diagnostic estimator: the Chun count applied to the positive-eigenvalue
/// eigenvectors ranked by |correlation| with the OLS residuals, then OLS.
pub fn chun_select(
    data: &Dataset,
    basis: &EigenBasis,
    w: &SpatialWeights,
) -> Result<EstimationReport> {
    let start = Instant::now();
    check_inputs(data, basis, w)?;
    let maker = ResidualMaker::new(&data.x)?;
    let moran = standardized_moran_with(&maker, &data.y, w)?;
    let positive = basis.positive_indices();
    let count = if positive.is_empty() {
        0
    } else {
        chun_candidate_count(moran.m, positive.len())?
    };
    let u = maker.residuals(&data.y)?;
    let mut ranked: Vec<(f64, usize)> = positive
        .iter()
        .map(|&j| (basis.vectors.column(j).dot(&u).abs(), j))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let limit = count.min(data.n().saturating_sub(data.k() + 3));
    let mut selected: Vec<usize> = ranked.iter().take(limit).map(|&(_, j)| j).collect();
    selected.sort_unstable();
    let builder = ReportBuilder {
        data,
        basis,
        w,
        z_before: moran.z,
    };
    let mut report = builder.from_ols(Method::Chun, &selected, None, Vec::new())?;
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
