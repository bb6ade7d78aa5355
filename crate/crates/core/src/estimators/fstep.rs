use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{check_inputs, Dataset, EstimationReport, Method, ReportBuilder, FLAG_MAX_STEPS};
use crate::error::{EsfError, Result};
use crate::linalg::hstack_columns;
use crate::moran::standardized_moran;
use crate::weights::{EigenBasis, SpatialWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateFilter {
    #[default]
    All,
    PositiveEigs,
    /// Keep eigenvectors with `λ / λ_max > ratio`.
    RatioThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FstepZConfig {
    pub epsilon: f64,
    pub candidate_filter: CandidateFilter,
    pub ratio: f64,
    /// Defaults to `n - k - 3`, the most eigenvectors for which Z stays defined.
    pub max_steps: Option<usize>,
}

impl Default for FstepZConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            candidate_filter: CandidateFilter::All,
            ratio: 0.25,
            max_steps: None,
        }
    }
}

impl FstepZConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(EsfError::InvalidInput(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(EsfError::InvalidInput(format!(
                "ratio must lie in [0, 1), got {}",
                self.ratio
            )));
        }
        Ok(())
    }

    pub fn candidates(&self, basis: &EigenBasis) -> Vec<usize> {
        let values = &basis.values;
        match self.candidate_filter {
            CandidateFilter::All => (0..values.len()).collect(),
            CandidateFilter::PositiveEigs => basis.positive_indices(),
            CandidateFilter::RatioThreshold => {
                let top = values.max();
                if top <= 0.0 {
                    return Vec::new();
                }
                (0..values.len())
                    .filter(|&j| values[j] / top > self.ratio)
                    .collect()
            }
        }
    }
}

/// Forward stepwise selection: at each step add the candidate eigenvector
/// that brings |Z| of the augmented OLS residuals closest to zero, until
/// |Z| < ε.
pub fn fstep_z(
    data: &Dataset,
    basis: &EigenBasis,
    w: &SpatialWeights,
    cfg: &FstepZConfig,
) -> Result<EstimationReport> {
    let start = Instant::now();
    check_inputs(data, basis, w)?;
    cfg.validate()?;
    let n = data.n();
    let k = data.k();
    let max_steps = cfg.max_steps.unwrap_or(n - k - 3).min(n - k - 3);

    let z0 = standardized_moran(&data.y, &data.x, w)?.z;
    let mut remaining = cfg.candidates(basis);
    let mut selected: Vec<usize> = Vec::new();
    let mut z = z0;
    let mut by_threshold = z.abs() < cfg.epsilon;

    while !by_threshold && selected.len() < max_steps && !remaining.is_empty() {
        let mut best: Option<(f64, usize, f64)> = None;
        let mut cols = selected.clone();
        cols.push(0);
        for (pos, &c) in remaining.iter().enumerate() {
            *cols.last_mut().expect("non-empty") = c;
            let design = hstack_columns(&data.x, &basis.vectors, &cols);
            let zc = match standardized_moran(&data.y, &design, w) {
                Ok(r) => r.z,
                Err(EsfError::RankDeficient { .. })
                | Err(EsfError::UndefinedMoran(_))
                | Err(EsfError::ZeroResiduals) => continue,
                Err(e) => return Err(e),
            };
            // candidates are scanned in ascending index order, so a strict
            // comparison keeps the lowest index among ties
            if best.map_or(true, |(b, _, _)| zc.abs() < b) {
                best = Some((zc.abs(), pos, zc));
            }
        }
        let Some((_, pos, zc)) = best else { break };
        selected.push(remaining.remove(pos));
        z = zc;
        by_threshold = z.abs() < cfg.epsilon;
    }

    let builder = ReportBuilder {
        data,
        basis,
        w,
        z_before: z0,
    };
    let mut flags = Vec::new();
    if !by_threshold {
        flags.push(FLAG_MAX_STEPS.to_string());
    }
    let mut sorted = selected;
    sorted.sort_unstable();
    let mut report = builder.from_ols(Method::FstepZ, &sorted, None, flags)?;
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
