use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{check_inputs, Dataset, EstimationReport, Method, ReportBuilder, FLAG_NO_SPATIAL_CORRELATION};
use crate::error::Result;
use crate::lasso::{assemble_solution, PartialledProblem, SolverOptions};
use crate::linalg::sample_sd;
use crate::moran::{standardized_moran_with, ResidualMaker};
use crate::weights::{EigenBasis, SpatialWeights};

/// Below this |Z| the residuals are treated as spatially uncorrelated and
/// the Lasso step is skipped (θ = 1/Z² would be unbounded).
pub const Z_ZERO_THRESHOLD: f64 = 1e-8;

/// How θ = 1/Z² enters the solver's unhalved, unit-norm objective
/// `||y - Xβ - Eγ||² + penalty·||γ||₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyScale {
    /// θ is a per-observation penalty on unit-variance eigenvectors:
    /// `(1/2n)||y - Xβ - Ẽγ||² + θ||γ||₁` with `Ẽ = √n E`. In the solver's
    /// parametrization this is `penalty = 2√n·θ`.
    #[default]
    PerObservation,
    /// θ passed to the solver unchanged.
    Unscaled,
}

impl PenaltyScale {
    pub fn penalty(self, theta: f64, n: usize) -> f64 {
        match self {
            PenaltyScale::PerObservation => 2.0 * (n as f64).sqrt() * theta,
            PenaltyScale::Unscaled => theta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiLassoConfig {
    pub post: bool,
    pub penalty_scale: PenaltyScale,
    /// Divide y by its sample standard deviation before the Lasso step.
    pub standardize_response: bool,
    pub solver: SolverOptions,
}

impl Default for MiLassoConfig {
    fn default() -> Self {
        Self {
            post: false,
            penalty_scale: PenaltyScale::default(),
            standardize_response: false,
            solver: SolverOptions::default(),
        }
    }
}

/// Lasso with θ = 1/Z² taken from the OLS residuals, over the full set of
/// eigenvectors. With `post`, OLS is refit on the selected eigenvectors.
pub fn mi_lasso(
    data: &Dataset,
    basis: &EigenBasis,
    w: &SpatialWeights,
    cfg: &MiLassoConfig,
) -> Result<EstimationReport> {
    let start = Instant::now();
    check_inputs(data, basis, w)?;
    let method = if cfg.post { Method::MiPlasso } else { Method::MiLasso };
    let maker = ResidualMaker::new(&data.x)?;
    let z = standardized_moran_with(&maker, &data.y, w)?.z;
    let builder = ReportBuilder {
        data,
        basis,
        w,
        z_before: z,
    };

    if z.abs() < Z_ZERO_THRESHOLD {
        let mut report = builder.from_ols(
            method,
            &[],
            None,
            vec![FLAG_NO_SPATIAL_CORRELATION.to_string()],
        )?;
        report.runtime_seconds = start.elapsed().as_secs_f64();
        return Ok(report);
    }

    let theta = 1.0 / (z * z);
    let penalty = cfg.penalty_scale.penalty(theta, data.n());
    let scale = if cfg.standardize_response {
        let sd = sample_sd(&data.y);
        if sd > 0.0 {
            sd
        } else {
            1.0
        }
    } else {
        1.0
    };
    let y_work = &data.y / scale;
    let reduced = PartialledProblem::new(&data.x, &y_work, &basis.vectors)?;
    let fit = reduced.solve(penalty, None, &cfg.solver)?;
    let mut fit = fit;
    if scale != 1.0 {
        fit.gamma *= scale;
    }
    let solution = assemble_solution(&reduced, (&data.y, &data.x, &basis.vectors), penalty, fit);

    let mut report = if cfg.post {
        let mut r = builder.from_ols(method, &solution.selected, Some(theta), Vec::new())?;
        r.solver_diag = Some((&solution).into());
        if !solution.converged {
            r.flags.push(super::FLAG_NOT_CONVERGED.to_string());
        }
        r
    } else {
        builder.from_lasso(method, &solution, Some(theta), Vec::new())?
    };
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
