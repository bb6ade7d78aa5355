//! Partially penalized Lasso
//!
//! ```text
//! min_{β, γ}  ||y - Xβ - Eγ||²₂ + θ ||γ||₁
//! ```
//!
//! The structural coefficients β are unpenalized. They are removed with the
//! Frisch-Waugh-Lovell projection (`ỹ = M_X y`, `Ẽ = M_X E`), the reduced
//! problem in γ is solved by cyclic coordinate descent, and β is recovered
//! by least squares of `y - Eγ̂` on X.
//!
//! The squared error is not halved, so the soft-threshold level is `θ / 2`
//! and the stationarity conditions read
//! `2 ẽⱼ'(ỹ - Ẽγ) = θ sign(γⱼ)` for active j and `|2 ẽⱼ'(ỹ - Ẽγ)| ≤ θ` otherwise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EsfError, Result};
use crate::linalg::{independent_columns, ols, OrthoBasis};

/// Columns whose squared norm shrinks below this fraction under `M_X` are
/// treated as annihilated and pinned at zero.
const ANNIHILATED_FRACTION: f64 = 1e-20;

#[derive(Debug, Clone)]
pub struct PartialLassoProblem {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Convergence threshold on the largest coefficient change in a full sweep.
    pub tol: f64,
    /// KKT violations must fall below `kkt_tol * max(θ, 1)`.
    pub kkt_tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            kkt_tol: 1e-6,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSolution {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub selected: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub max_kkt_violation: f64,
    pub theta: f64,
    pub converged: bool,
}

/// `(M_X y, M_X E)`.
pub fn fwl_partial_out(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    e: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_dims(x, y, e)?;
    let basis = OrthoBasis::new(x)?;
    Ok((basis.annihilate(y), basis.annihilate_matrix(e)))
}

fn check_dims(x: &DMatrix<f64>, y: &DVector<f64>, e: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(EsfError::DimensionMismatch {
            what: "design rows vs response length",
            expected: y.len(),
            got: x.nrows(),
        });
    }
    if e.nrows() != y.len() {
        return Err(EsfError::DimensionMismatch {
            what: "eigenvector rows vs response length",
            expected: y.len(),
            got: e.nrows(),
        });
    }
    Ok(())
}

/// The reduced problem after partialling out X, with cached column norms.
/// Reusable across many θ values (warm starts along a path).
#[derive(Debug, Clone)]
pub struct PartialledProblem {
    basis: OrthoBasis,
    y_tilde: DVector<f64>,
    e_tilde: DMatrix<f64>,
    col_sq: Vec<f64>,
    frozen: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct ReducedFit {
    pub gamma: DVector<f64>,
    pub residual: DVector<f64>,
    pub sweeps: usize,
    pub max_kkt_violation: f64,
    pub converged: bool,
}

impl PartialledProblem {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>, e: &DMatrix<f64>) -> Result<Self> {
        check_dims(x, y, e)?;
        let basis = OrthoBasis::new(x)?;
        let y_tilde = basis.annihilate(y);
        let e_tilde = basis.annihilate_matrix(e);
        let col_sq: Vec<f64> = e_tilde.column_iter().map(|c| c.norm_squared()).collect();
        let frozen = e
            .column_iter()
            .zip(&col_sq)
            .map(|(c, &sq)| {
                let orig = c.norm_squared();
                orig == 0.0 || sq <= ANNIHILATED_FRACTION * orig
            })
            .collect();
        Ok(Self {
            basis,
            y_tilde,
            e_tilde,
            col_sq,
            frozen,
        })
    }

    pub fn y_tilde(&self) -> &DVector<f64> {
        &self.y_tilde
    }

    pub fn e_tilde(&self) -> &DMatrix<f64> {
        &self.e_tilde
    }

    pub fn basis(&self) -> &OrthoBasis {
        &self.basis
    }

    pub fn p(&self) -> usize {
        self.e_tilde.ncols()
    }

    /// Smallest θ at which γ = 0 is optimal: `2 max_j |ẽⱼ'ỹ|`.
    pub fn theta_max(&self) -> f64 {
        let c = self.e_tilde.tr_mul(&self.y_tilde);
        (0..c.len())
            .filter(|&j| !self.frozen[j])
            .map(|j| c[j].abs())
            .fold(0.0, f64::max)
            * 2.0
    }

    /// Cyclic coordinate descent from `warm` (or zero).
    pub fn solve(
        &self,
        theta: f64,
        warm: Option<&DVector<f64>>,
        opts: &SolverOptions,
    ) -> Result<ReducedFit> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(EsfError::NonPositiveTheta(theta));
        }
        let p = self.p();
        let mut gamma = match warm {
            Some(g) if g.len() == p => g.clone(),
            Some(g) => {
                return Err(EsfError::DimensionMismatch {
                    what: "warm start length",
                    expected: p,
                    got: g.len(),
                })
            }
            None => DVector::zeros(p),
        };
        for j in 0..p {
            if self.frozen[j] {
                gamma[j] = 0.0;
            }
        }
        let mut residual = &self.y_tilde - &self.e_tilde * &gamma;
        let half = 0.5 * theta;
        let kkt_bound = opts.kkt_tol * theta.max(1.0);
        let all: Vec<usize> = (0..p).filter(|&j| !self.frozen[j]).collect();

        let mut sweeps = 0;
        #[cfg(debug_assertions)]
        let mut last_obj = self.objective(&residual, &gamma, theta);

        loop {
            let change = self.sweep(&all, &mut gamma, &mut residual, half);
            sweeps += 1;
            #[cfg(debug_assertions)]
            {
                let obj = self.objective(&residual, &gamma, theta);
                debug_assert!(
                    obj <= last_obj + 1e-10 * last_obj.abs().max(1.0),
                    "objective increased from {last_obj} to {obj}"
                );
                last_obj = obj;
            }
            if change < opts.tol {
                let viol = self.kkt_violation(&gamma, &residual, theta);
                if viol <= kkt_bound {
                    return Ok(ReducedFit {
                        gamma,
                        residual,
                        sweeps,
                        max_kkt_violation: viol,
                        converged: true,
                    });
                }
            }
            if sweeps >= opts.max_sweeps {
                break;
            }

            // iterate on the active set, then go back to a full sweep
            let active: Vec<usize> = all.iter().copied().filter(|&j| gamma[j] != 0.0).collect();
            if !active.is_empty() {
                while sweeps < opts.max_sweeps {
                    let change = self.sweep(&active, &mut gamma, &mut residual, half);
                    sweeps += 1;
                    if change < opts.tol {
                        break;
                    }
                }
            }
            if sweeps >= opts.max_sweeps {
                break;
            }
        }
        let viol = self.kkt_violation(&gamma, &residual, theta);
        Ok(ReducedFit {
            gamma,
            residual,
            sweeps,
            max_kkt_violation: viol,
            converged: false,
        })
    }

    fn sweep(
        &self,
        coords: &[usize],
        gamma: &mut DVector<f64>,
        residual: &mut DVector<f64>,
        half_theta: f64,
    ) -> f64 {
        let mut max_change: f64 = 0.0;
        for &j in coords {
            let col = self.e_tilde.column(j);
            let sq = self.col_sq[j];
            let old = gamma[j];
            let rho = col.dot(residual) + sq * old;
            let new = soft_threshold(rho, half_theta) / sq;
            let delta = new - old;
            if delta != 0.0 {
                residual.axpy(-delta, &col, 1.0);
                gamma[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    #[cfg(debug_assertions)]
    fn objective(&self, residual: &DVector<f64>, gamma: &DVector<f64>, theta: f64) -> f64 {
        residual.norm_squared() + theta * gamma.lp_norm(1)
    }

    /// Largest violation of the stationarity conditions at `gamma`.
    pub fn kkt_violation(&self, gamma: &DVector<f64>, residual: &DVector<f64>, theta: f64) -> f64 {
        let grad = self.e_tilde.tr_mul(residual) * 2.0;
        let mut worst: f64 = 0.0;
        for j in 0..gamma.len() {
            if self.frozen[j] {
                continue;
            }
            let v = if gamma[j] != 0.0 {
                (grad[j] - theta * gamma[j].signum()).abs()
            } else {
                (grad[j].abs() - theta).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Unpenalized coefficients given γ: least squares of `y - Eγ` on X.
    pub fn recover_beta(&self, y: &DVector<f64>, e: &DMatrix<f64>, gamma: &DVector<f64>) -> DVector<f64> {
        self.basis.coefficients(&(y - e * gamma))
    }
}

pub fn soft_threshold(a: f64, t: f64) -> f64 {
    if a > t {
        a - t
    } else if a < -t {
        a + t
    } else {
        0.0
    }
}

/// `2 max_j |ẽⱼ'ỹ|` for the problem's data.
pub fn theta_max(problem: &PartialLassoProblem) -> Result<f64> {
    Ok(PartialledProblem::new(&problem.x, &problem.y, &problem.e)?.theta_max())
}

pub fn solve_partial_lasso(problem: &PartialLassoProblem, opts: &SolverOptions) -> Result<LassoSolution> {
    if !(problem.theta > 0.0) {
        return Err(EsfError::NonPositiveTheta(problem.theta));
    }
    let reduced = PartialledProblem::new(&problem.x, &problem.y, &problem.e)?;
    let fit = reduced.solve(problem.theta, None, opts)?;
    Ok(assemble_solution(
        &reduced,
        (&problem.y, &problem.x, &problem.e),
        problem.theta,
        fit,
    ))
}

/// Recover β for a reduced fit and package the full solution.
pub(crate) fn assemble_solution(
    reduced: &PartialledProblem,
    (y, x, e): (&DVector<f64>, &DMatrix<f64>, &DMatrix<f64>),
    theta: f64,
    fit: ReducedFit,
) -> LassoSolution {
    let beta = reduced.recover_beta(y, e, &fit.gamma);
    let resid = y - x * &beta - e * &fit.gamma;
    let objective = resid.norm_squared() + theta * fit.gamma.lp_norm(1);
    let selected = (0..fit.gamma.len()).filter(|&j| fit.gamma[j] != 0.0).collect();
    LassoSolution {
        gamma: fit.gamma.iter().copied().collect(),
        beta: beta.iter().copied().collect(),
        selected,
        objective,
        iterations: fit.sweeps,
        max_kkt_violation: fit.max_kkt_violation,
        theta,
        converged: fit.converged,
    }
}

/// OLS on `[X, E_selected]`.
#[derive(Debug, Clone)]
pub struct PostLassoFit {
    pub beta: DVector<f64>,
    /// Coefficients of the retained eigenvector columns.
    pub gamma: DVector<f64>,
    /// Positions (into `e_selected`) of retained columns.
    pub kept: Vec<usize>,
    /// Positions of columns dropped as collinear with earlier ones.
    pub dropped: Vec<usize>,
    pub plain_se: DVector<f64>,
    pub robust_se: DVector<f64>,
    pub residuals: DVector<f64>,
    pub rss: f64,
}

pub fn post_lasso_refit(
    x: &DMatrix<f64>,
    e_selected: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<PostLassoFit> {
    check_dims(x, y, e_selected)?;
    let positions: Vec<usize> = (0..e_selected.ncols()).collect();
    let (kept, dropped) = independent_columns(x, e_selected, &positions)?;
    let k = x.ncols();
    let n = y.len();
    if n <= k + kept.len() {
        return Err(EsfError::InvalidInput(format!(
            "post-Lasso refit needs n > k + s, got n = {n}, k = {k}, s = {}",
            kept.len()
        )));
    }
    let design = crate::linalg::hstack_columns(x, e_selected, &kept);
    let fit = ols(&design, y)?;
    Ok(PostLassoFit {
        beta: fit.coefficients.rows(0, k).into_owned(),
        gamma: fit.coefficients.rows(k, kept.len()).into_owned(),
        kept,
        dropped,
        plain_se: fit.se_plain,
        robust_se: fit.se_robust,
        residuals: fit.residuals,
        rss: fit.rss,
    })
}
