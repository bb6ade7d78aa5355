//! Eigenvector selection procedures and their common report type.

mod chun;
mod cv;
mod fstep;
mod mi_lasso;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use chun::{chun_candidate_count, chun_select, chun_target};
pub use cv::{assign_folds, brent_minimize, cv_lasso, default_fold_solver, CvConfig, FLAG_FOLD_NOT_CONVERGED};
pub use fstep::{fstep_z, CandidateFilter, FstepZConfig};
pub use mi_lasso::{mi_lasso, MiLassoConfig, PenaltyScale, Z_ZERO_THRESHOLD};

use crate::error::{EsfError, Result};
use crate::lasso::LassoSolution;
use crate::linalg::{hstack_columns, independent_columns, ols, OlsFit};
use crate::moran::{standardized_moran, MoranMoments, ResidualMaker};
use crate::weights::{EigenBasis, SpatialWeights};

/// Response and regressors. `x` carries every structural column, including
/// the intercept when one is wanted.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
}

pub const INTERCEPT_NAME: &str = "(Intercept)";

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(EsfError::DimensionMismatch {
                what: "regressor rows vs response length",
                expected: y.len(),
                got: x.nrows(),
            });
        }
        if names.len() != x.ncols() {
            return Err(EsfError::DimensionMismatch {
                what: "coefficient names vs regressor columns",
                expected: x.ncols(),
                got: names.len(),
            });
        }
        Ok(Self { y, x, names })
    }

    /// Prepend an intercept column to `regressors`.
    pub fn with_intercept(
        y: DVector<f64>,
        regressors: &DMatrix<f64>,
        names: &[String],
    ) -> Result<Self> {
        let n = regressors.nrows();
        let mut x = DMatrix::from_element(n, regressors.ncols() + 1, 1.0);
        x.columns_mut(1, regressors.ncols()).copy_from(regressors);
        let mut all = vec![INTERCEPT_NAME.to_string()];
        all.extend(names.iter().cloned());
        Self::new(y, x, all)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// Centre and scale the response and every non-constant regressor to
    /// unit sample standard deviation. Constant columns are left untouched.
    pub fn standardized(&self) -> (Dataset, Standardization) {
        let y_mean = self.y.mean();
        let y_sd = crate::linalg::sample_sd(&self.y);
        let y_sd = if y_sd > 0.0 { y_sd } else { 1.0 };
        let mut x = self.x.clone();
        let mut x_mean = vec![0.0; self.k()];
        let mut x_sd = vec![1.0; self.k()];
        for j in 0..self.k() {
            let col = self.x.column(j).into_owned();
            let sd = crate::linalg::sample_sd(&col);
            if sd > 0.0 {
                x_mean[j] = col.mean();
                x_sd[j] = sd;
                x.column_mut(j).copy_from(&col.map(|v| (v - x_mean[j]) / sd));
            }
        }
        let y = self.y.map(|v| (v - y_mean) / y_sd);
        (
            Dataset {
                y,
                x,
                names: self.names.clone(),
            },
            Standardization {
                y_mean,
                y_sd,
                x_mean,
                x_sd,
            },
        )
    }
}

/// Location/scale applied by [`Dataset::standardized`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub y_mean: f64,
    pub y_sd: f64,
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ols,
    MiLasso,
    MiPlasso,
    CvLasso,
    CvPlasso,
    FstepZ,
    Chun,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ols,
        Method::MiLasso,
        Method::MiPlasso,
        Method::CvLasso,
        Method::CvPlasso,
        Method::FstepZ,
        Method::Chun,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::MiLasso => "mi_lasso",
            Method::MiPlasso => "mi_plasso",
            Method::CvLasso => "cv_lasso",
            Method::CvPlasso => "cv_plasso",
            Method::FstepZ => "fstep_z",
            Method::Chun => "chun",
        }
    }

    /// Post-Lasso counterpart of a Lasso method, if any.
    pub fn post(self) -> Method {
        match self {
            Method::MiLasso => Method::MiPlasso,
            Method::CvLasso => Method::CvPlasso,
            other => other,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = EsfError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| {
                EsfError::InvalidInput(format!(
                    "unknown method '{s}' (expected one of: {})",
                    Method::ALL.map(|m| m.as_str()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se_plain: f64,
    pub se_robust: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub penalty: f64,
    pub iterations: usize,
    pub objective: f64,
    pub max_kkt_violation: f64,
    pub converged: bool,
}

impl From<&LassoSolution> for SolverDiagnostics {
    fn from(s: &LassoSolution) -> Self {
        Self {
            penalty: s.theta,
            iterations: s.iterations,
            objective: s.objective,
            max_kkt_violation: s.max_kkt_violation,
            converged: s.converged,
        }
    }
}

/// Uniform output of every estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub method: Method,
    pub n: usize,
    pub coefficients: Vec<Coefficient>,
    /// Indices into the eigenbasis, ascending.
    pub selected_eigs: Vec<usize>,
    /// Eigenvector coefficients, aligned with `selected_eigs`.
    pub eigen_coefficients: Vec<f64>,
    /// Tuning parameter chosen by the procedure (1/Z² for Moran-tuned
    /// methods, the cross-validated penalty for CV methods).
    pub theta: Option<f64>,
    pub z_before: f64,
    pub z_after: Option<f64>,
    pub adj_r2: f64,
    pub runtime_seconds: f64,
    pub solver_diag: Option<SolverDiagnostics>,
    /// Fold label of every observation (CV methods only).
    pub folds: Option<Vec<usize>>,
    pub flags: Vec<String>,
}

impl EstimationReport {
    pub fn beta(&self, name: &str) -> Option<f64> {
        self.coefficients
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.estimate)
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    /// `name,estimate,se_plain,se_robust` table, eigenvectors included as
    /// `eig_<index>` with empty standard errors when none are available.
    pub fn coefficients_csv(&self) -> String {
        let mut out = String::from("name,estimate,se_plain,se_robust\n");
        for c in &self.coefficients {
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(&c.name),
                c.estimate,
                c.se_plain,
                c.se_robust
            ));
        }
        for (idx, g) in self.selected_eigs.iter().zip(&self.eigen_coefficients) {
            out.push_str(&format!("eig_{idx},{g},,\n"));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const FLAG_NO_SPATIAL_CORRELATION: &str = "no_spatial_correlation";
pub const FLAG_MAX_STEPS: &str = "max_steps_exhausted";
pub const FLAG_NOT_CONVERGED: &str = "solver_not_converged";
pub const FLAG_COLLINEAR_DROPPED: &str = "collinear_eigenvectors_dropped";

/// Shared pieces for assembling reports.
pub(crate) struct ReportBuilder<'a> {
    pub data: &'a Dataset,
    pub basis: &'a EigenBasis,
    pub w: &'a SpatialWeights,
    pub z_before: f64,
}

impl ReportBuilder<'_> {
    /// Report from an OLS fit of y on `[X, E_selected]`.
    pub fn from_ols(
        &self,
        method: Method,
        selected: &[usize],
        theta: Option<f64>,
        mut flags: Vec<String>,
    ) -> Result<EstimationReport> {
        let (kept, dropped) = independent_columns(&self.data.x, &self.basis.vectors, selected)?;
        if !dropped.is_empty() {
            flags.push(FLAG_COLLINEAR_DROPPED.to_string());
        }
        let mut kept = kept;
        kept.sort_unstable();
        let design = hstack_columns(&self.data.x, &self.basis.vectors, &kept);
        let fit = ols(&design, &self.data.y)?;
        let z_after = standardized_moran(&self.data.y, &design, self.w)
            .ok()
            .map(|r| r.z);
        let k = self.data.k();
        Ok(EstimationReport {
            method,
            n: self.data.n(),
            coefficients: self.coefficients(&fit, 1.0),
            eigen_coefficients: fit.coefficients.rows(k, kept.len()).iter().copied().collect(),
            selected_eigs: kept,
            theta,
            z_before: self.z_before,
            z_after,
            adj_r2: adj_r2(&self.data.y, fit.rss, design.ncols()),
            runtime_seconds: 0.0,
            solver_diag: None,
            folds: None,
            flags,
        })
    }

    /// Report for a penalized fit with fixed eigenvector coefficients γ.
    /// Standard errors come from regressing `y - Eγ` on X with the residual
    /// degrees of freedom reduced by the number of selected eigenvectors.
    pub fn from_lasso(
        &self,
        method: Method,
        solution: &LassoSolution,
        theta: Option<f64>,
        mut flags: Vec<String>,
    ) -> Result<EstimationReport> {
        let n = self.data.n();
        let k = self.data.k();
        let selected = solution.selected.clone();
        let gamma_sel: Vec<f64> = selected.iter().map(|&j| solution.gamma[j]).collect();
        let mut filtered = self.data.y.clone();
        for (&j, &g) in selected.iter().zip(&gamma_sel) {
            filtered.axpy(-g, &self.basis.vectors.column(j), 1.0);
        }
        let fit = ols(&self.data.x, &filtered)?;
        let s = selected.len();
        let scale = if n > k + s {
            ((n - k) as f64 / (n - k - s) as f64).sqrt()
        } else {
            f64::INFINITY
        };

        let (kept, _) = independent_columns(&self.data.x, &self.basis.vectors, &selected)?;
        let design = hstack_columns(&self.data.x, &self.basis.vectors, &kept);
        let z_after = ResidualMaker::new(&design)
            .and_then(|maker| MoranMoments::new(&maker, self.w))
            .and_then(|m| m.standardize(&fit.residuals, self.w))
            .ok()
            .map(|r| r.z);
        if !solution.converged {
            flags.push(FLAG_NOT_CONVERGED.to_string());
        }
        Ok(EstimationReport {
            method,
            n,
            coefficients: self.coefficients(&fit, scale),
            selected_eigs: selected,
            eigen_coefficients: gamma_sel,
            theta,
            z_before: self.z_before,
            z_after,
            adj_r2: adj_r2(&self.data.y, fit.rss, k + s),
            runtime_seconds: 0.0,
            solver_diag: Some(SolverDiagnostics::from(solution)),
            folds: None,
            flags,
        })
    }

    fn coefficients(&self, fit: &OlsFit, se_scale: f64) -> Vec<Coefficient> {
        self.data
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| Coefficient {
                name: name.clone(),
                estimate: fit.coefficients[j],
                se_plain: fit.se_plain[j] * se_scale,
                se_robust: fit.se_robust[j] * se_scale,
            })
            .collect()
    }
}

/// `1 - (RSS / (n - p)) / (TSS / (n - 1))`.
fn adj_r2(y: &DVector<f64>, rss: f64, p: usize) -> f64 {
    let n = y.len();
    let mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if n <= p || tss == 0.0 {
        return 0.0;
    }
    1.0 - (rss / (n - p) as f64) / (tss / (n - 1) as f64)
}

pub(crate) fn check_inputs(data: &Dataset, basis: &EigenBasis, w: &SpatialWeights) -> Result<()> {
    let n = data.n();
    if w.n() != n {
        return Err(EsfError::DimensionMismatch {
            what: "weights dimension vs observations",
            expected: n,
            got: w.n(),
        });
    }
    if basis.n() != n {
        return Err(EsfError::DimensionMismatch {
            what: "eigenbasis dimension vs observations",
            expected: n,
            got: basis.n(),
        });
    }
    if n <= data.k() + 2 {
        return Err(EsfError::InvalidInput(format!(
            "need n > k + 2, got n = {n}, k = {}",
            data.k()
        )));
    }
    Ok(())
}

/// Plain OLS of y on X; `z_before == z_after`.
pub fn ols_baseline(
    data: &Dataset,
    basis: &EigenBasis,
    w: &SpatialWeights,
) -> Result<EstimationReport> {
    let start = std::time::Instant::now();
    check_inputs(data, basis, w)?;
    let z = standardized_moran(&data.y, &data.x, w)?.z;
    let builder = ReportBuilder {
        data,
        basis,
        w,
        z_before: z,
    };
    let mut report = builder.from_ols(Method::Ols, &[], None, Vec::new())?;
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Run any method with its default configuration.
pub fn estimate(
    method: Method,
    data: &Dataset,
    basis: &EigenBasis,
    w: &SpatialWeights,
    options: &EstimatorOptions,
) -> Result<EstimationReport> {
    match method {
        Method::Ols => ols_baseline(data, basis, w),
        Method::MiLasso | Method::MiPlasso => {
            let cfg = MiLassoConfig {
                post: method == Method::MiPlasso,
                ..options.mi_lasso.clone()
            };
            mi_lasso(data, basis, w, &cfg)
        }
        Method::CvLasso | Method::CvPlasso => {
            let cfg = CvConfig {
                post: method == Method::CvPlasso,
                ..options.cv.clone()
            };
            cv_lasso(data, basis, w, &cfg)
        }
        Method::FstepZ => fstep_z(data, basis, w, &options.fstep),
        Method::Chun => chun_select(data, basis, w),
    }
}

/// Turn a Lasso report into its post-Lasso counterpart by refitting OLS on
/// the selected eigenvectors. Reports from other methods are returned as-is.
pub fn post_refit(
    report: &EstimationReport,
    data: &Dataset,
    basis: &EigenBasis,
    w: &SpatialWeights,
) -> Result<EstimationReport> {
    let method = report.method.post();
    if method == report.method {
        return Ok(report.clone());
    }
    let start = std::time::Instant::now();
    let builder = ReportBuilder {
        data,
        basis,
        w,
        z_before: report.z_before,
    };
    let carried: Vec<String> = report
        .flags
        .iter()
        .filter(|f| f.as_str() != FLAG_COLLINEAR_DROPPED)
        .cloned()
        .collect();
    let mut post = builder.from_ols(method, &report.selected_eigs, report.theta, carried)?;
    post.solver_diag = report.solver_diag.clone();
    post.folds = report.folds.clone();
    post.runtime_seconds = report.runtime_seconds + start.elapsed().as_secs_f64();
    Ok(post)
}

/// Per-method configuration bundle used by [`estimate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOptions {
    pub mi_lasso: MiLassoConfig,
    pub cv: CvConfig,
    pub fstep: FstepZConfig,
}
