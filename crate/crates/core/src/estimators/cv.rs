use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_inputs, Dataset, EstimationReport, Method, ReportBuilder};
use crate::error::{EsfError, Result};
use crate::lasso::{assemble_solution, PartialledProblem, SolverOptions};
use crate::moran::standardized_moran;
use crate::seed;
use crate::weights::{EigenBasis, SpatialWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub post: bool,
    pub folds: usize,
    pub seed: u64,
    /// Lower end of the search interval as a fraction of θ_max.
    pub floor_ratio: f64,
    /// Total loss evaluations, bracketing pass included.
    pub max_evals: usize,
    /// Points in the log-spaced bracketing pass from θ_max downward.
    pub grid_points: usize,
    /// Solver settings for the training-fold fits inside the search. Near
    /// the bottom of the interval the fold problems are close to
    /// interpolation and coordinate descent converges very slowly, so these
    /// are looser than the final fit's.
    pub fold_solver: SolverOptions,
    /// Solver settings for the final fit on all observations.
    pub solver: SolverOptions,
}

/// The bracketing pass stops once this many consecutive points fail to
/// improve on the best loss so far.
const GRID_PATIENCE: usize = 3;

pub const FLAG_FOLD_NOT_CONVERGED: &str = "cv_fold_fit_not_converged";

pub fn default_fold_solver() -> SolverOptions {
    SolverOptions {
        tol: 1e-6,
        kkt_tol: 1e-4,
        max_sweeps: 2_000,
    }
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            post: false,
            folds: 5,
            seed: 0,
            floor_ratio: 1e-4,
            max_evals: 40,
            grid_points: 13,
            fold_solver: default_fold_solver(),
            solver: SolverOptions::default(),
        }
    }
}

struct Fold {
    problem: PartialledProblem,
    train_y: DVector<f64>,
    train_e: DMatrix<f64>,
    test_y: DVector<f64>,
    test_x: DMatrix<f64>,
    test_e: DMatrix<f64>,
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Random balanced fold labels in `0..folds`.
pub fn assign_folds(n: usize, folds: usize, seed_value: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream(seed_value, &[0xCF]));
    let mut labels = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        labels[i] = pos % folds;
    }
    labels
}

/// K-fold cross-validated penalty: a coarse log-θ bracketing pass followed by
/// Brent's method on log θ inside the bracket.
/// θ is in the solver's own scale (`||y - Xβ - Eγ||² + θ||γ||₁`).
pub fn cv_lasso(
    data: &Dataset,
    basis: &EigenBasis,
    w: &SpatialWeights,
    cfg: &CvConfig,
) -> Result<EstimationReport> {
    let start = Instant::now();
    check_inputs(data, basis, w)?;
    let n = data.n();
    if cfg.folds < 2 || cfg.folds > n {
        return Err(EsfError::InvalidInput(format!(
            "folds must lie in [2, n], got {} with n = {n}",
            cfg.folds
        )));
    }
    if !(cfg.floor_ratio > 0.0 && cfg.floor_ratio < 1.0) {
        return Err(EsfError::InvalidInput(format!(
            "floor_ratio must lie in (0, 1), got {}",
            cfg.floor_ratio
        )));
    }
    let method = if cfg.post { Method::CvPlasso } else { Method::CvLasso };
    let z = standardized_moran(&data.y, &data.x, w)?.z;
    let builder = ReportBuilder {
        data,
        basis,
        w,
        z_before: z,
    };
    let labels = assign_folds(n, cfg.folds, cfg.seed);

    let full = PartialledProblem::new(&data.x, &data.y, &basis.vectors)?;
    let theta_max = full.theta_max();
    if theta_max == 0.0 {
        let mut report = builder.from_ols(method, &[], None, Vec::new())?;
        report.folds = Some(labels);
        report.runtime_seconds = start.elapsed().as_secs_f64();
        return Ok(report);
    }

    let mut folds = Vec::with_capacity(cfg.folds);
    for f in 0..cfg.folds {
        let train: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
        let train_x = select_rows(&data.x, &train);
        let train_y = DVector::from_fn(train.len(), |i, _| data.y[train[i]]);
        let train_e = select_rows(&basis.vectors, &train);
        let problem = PartialledProblem::new(&train_x, &train_y, &train_e).map_err(|e| {
            EsfError::InvalidInput(format!("fold {f} has a degenerate training design: {e}"))
        })?;
        folds.push(Fold {
            problem,
            train_y,
            train_e,
            test_y: DVector::from_fn(test.len(), |i, _| data.y[test[i]]),
            test_x: select_rows(&data.x, &test),
            test_e: select_rows(&basis.vectors, &test),
        });
    }

    let mut warm: Vec<Option<DVector<f64>>> = vec![None; folds.len()];
    let mut failure: Option<EsfError> = None;
    let mut unconverged = 0usize;
    let mut evaluated: Vec<(f64, f64)> = Vec::new();
    let mut loss = |log_theta: f64| -> f64 {
        let theta = log_theta.exp();
        let mut sse = 0.0;
        for (fold, start) in folds.iter().zip(warm.iter_mut()) {
            let fit = match fold.problem.solve(theta, start.as_ref(), &cfg.fold_solver) {
                Ok(fit) => fit,
                Err(e) => {
                    failure.get_or_insert(e);
                    return f64::INFINITY;
                }
            };
            let beta = fold
                .problem
                .recover_beta(&fold.train_y, &fold.train_e, &fit.gamma);
            let pred = &fold.test_x * &beta + &fold.test_e * &fit.gamma;
            sse += (&fold.test_y - pred).norm_squared();
            if !fit.converged {
                unconverged += 1;
            }
            *start = Some(fit.gamma);
        }
        let value = sse / n as f64;
        evaluated.push((log_theta, value));
        value
    };

    // The loss is flat and noisy deep in the interval, where Brent's first
    // golden-section probe would land. A coarse warm-started pass down from
    // θ_max brackets the minimum first; Brent then refines inside the bracket.
    let hi = theta_max.ln();
    let lo = (cfg.floor_ratio * theta_max).ln();
    let grid_len = cfg.grid_points.clamp(2, cfg.max_evals.max(2));
    let grid: Vec<f64> = (0..grid_len)
        .map(|i| hi - (hi - lo) * i as f64 / (grid_len - 1) as f64)
        .collect();
    let mut grid_loss = Vec::with_capacity(grid_len);
    let mut best = 0usize;
    for (i, &g) in grid.iter().enumerate() {
        let v = loss(g);
        grid_loss.push(v);
        if v < grid_loss[best] {
            best = i;
        }
        if i >= best + GRID_PATIENCE {
            break;
        }
    }
    let left = grid[(best + 1).min(grid_len - 1)];
    let right = grid[best.saturating_sub(1)];
    let remaining = cfg.max_evals.saturating_sub(grid_loss.len());
    if remaining > 0 && right > left {
        brent_minimize(&mut loss, left, right, 1e-3, remaining);
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let (log_best, _) = evaluated
        .iter()
        .copied()
        .fold((hi, f64::INFINITY), |acc, e| if e.1 < acc.1 { e } else { acc });
    let theta = log_best.exp();

    let fit = full.solve(theta, None, &cfg.solver)?;
    let solution = assemble_solution(&full, (&data.y, &data.x, &basis.vectors), theta, fit);
    let flags = if unconverged > 0 {
        vec![FLAG_FOLD_NOT_CONVERGED.to_string()]
    } else {
        Vec::new()
    };
    let mut report = if cfg.post {
        let mut r = builder.from_ols(method, &solution.selected, Some(theta), flags)?;
        r.solver_diag = Some((&solution).into());
        if !solution.converged {
            r.flags.push(super::FLAG_NOT_CONVERGED.to_string());
        }
        r
    } else {
        builder.from_lasso(method, &solution, Some(theta), flags)?
    };
    report.folds = Some(labels);
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Brent's derivative-free minimizer on `[a, b]` (golden section with
/// parabolic interpolation). Stops when the bracket is below
/// `tol·|x| + 1e-10` or after `max_evals` function evaluations.
/// Returns `(x, f(x), evaluations)`.
pub fn brent_minimize<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    tol: f64,
    max_evals: usize,
) -> (f64, f64, usize) {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut evals = 1;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    while evals < max_evals {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-10;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        evals += 1;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx, evals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_parabola_minimum() {
        let mut f = |x: f64| (x - 1.3).powi(2) + 0.5;
        let (x, fx, evals) = brent_minimize(&mut f, -4.0, 5.0, 1e-8, 100);
        assert!((x - 1.3).abs() < 1e-6, "{x}");
        assert!((fx - 0.5).abs() < 1e-10);
        assert!(evals < 30);
    }

    #[test]
    fn brent_respects_eval_cap() {
        let mut count = 0;
        let mut f = |x: f64| {
            count += 1;
            x.cos()
        };
        let (_, _, evals) = brent_minimize(&mut f, 0.0, 6.0, 1e-14, 5);
        assert_eq!(evals, 5);
        assert_eq!(count, 5);
    }

    #[test]
    fn brent_boundary_minimum() {
        let mut f = |x: f64| x;
        let (x, _, _) = brent_minimize(&mut f, 0.0, 1.0, 1e-6, 100);
        assert!(x < 1e-4);
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let a = assign_folds(23, 5, 9);
        assert_eq!(a, assign_folds(23, 5, 9));
        assert_ne!(a, assign_folds(23, 5, 10));
        for f in 0..5 {
            let c = a.iter().filter(|&&l| l == f).count();
            assert!(c == 4 || c == 5);
        }
    }
}
