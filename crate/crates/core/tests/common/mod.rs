//! Independent reference computations used by the integration tests.
//!
//! Nothing here calls into the solver or the Moran code under test; the
//! oracles use explicit inverses, dense projectors and brute force.

#![allow(dead_code)]

use esf::seed;
use esf::weights::{build_bernoulli_swm, decompose};
use esf::{DMatrix, DVector, EigenBasis, LassoSolution, SpatialWeights};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(s: u64) -> ChaCha8Rng {
    seed::stream(s, &[0x7E57])
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Intercept plus `k - 1` standard normal columns.
pub fn design(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    let mut x = normal_matrix(rng, n, k);
    if k > 0 {
        x.column_mut(0).fill(1.0);
    }
    x
}

/// Max-row-sum normalized Bernoulli weights.
pub fn weights(n: usize, mu: f64, s: u64) -> SpatialWeights {
    build_bernoulli_swm(n, mu, s)
        .unwrap()
        .normalize_max_row_sum()
        .unwrap()
}

pub fn weights_and_basis(n: usize, mu: f64, s: u64) -> (SpatialWeights, EigenBasis) {
    let w = weights(n, mu, s);
    let basis = decompose(&w).unwrap();
    (w, basis)
}

/// `p` distinct eigenvectors of a random weights matrix.
pub fn eigen_columns(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    let (_, basis) = weights_and_basis(n, 4.0_f64.min(n as f64 - 1.0), rng.random());
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..p {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    DMatrix::from_fn(n, p, |r, c| basis.vectors[(r, idx[c])])
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Solve a symmetric positive definite system by explicit Cholesky.
fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    Some(chol.solve(b))
}

pub fn objective(y: &DVector<f64>, x: &DMatrix<f64>, e: &DMatrix<f64>, beta: &[f64], gamma: &[f64], theta: f64) -> f64 {
    let b = DVector::from_column_slice(beta);
    let g = DVector::from_column_slice(gamma);
    (y - x * b - e * &g).norm_squared() + theta * g.lp_norm(1)
}

/// Exhaustive sign-pattern solution of
/// `min ||y - Xβ - Eγ||² + θ||γ||₁`.
///
/// For every assignment of {-1, 0, +1} to the γ coordinates the stationarity
/// equations restricted to that pattern are solved; a pattern is accepted
/// when the solution has the assumed signs and the inactive coordinates
/// satisfy the subgradient bound. Returns `(objective, beta, gamma)` of the
/// best accepted pattern.
pub fn sign_pattern_oracle(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    e: &DMatrix<f64>,
    theta: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let (n, k) = x.shape();
    let p = e.ncols();
    assert!(p <= 10, "3^p patterns");
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut pattern = vec![0i8; p];
    let total = 3usize.pow(p as u32);
    for code in 0..total {
        let mut c = code;
        for s in pattern.iter_mut() {
            *s = (c % 3) as i8 - 1;
            c /= 3;
        }
        let active: Vec<usize> = (0..p).filter(|&j| pattern[j] != 0).collect();
        let m = k + active.len();
        let z = DMatrix::from_fn(n, m, |r, col| {
            if col < k {
                x[(r, col)]
            } else {
                e[(r, active[col - k])]
            }
        });
        let mut rhs = z.transpose() * y;
        for (i, &j) in active.iter().enumerate() {
            rhs[k + i] -= 0.5 * theta * pattern[j] as f64;
        }
        let Some(sol) = spd_solve(&(z.transpose() * &z), &rhs) else {
            continue;
        };
        let mut gamma = vec![0.0; p];
        let mut consistent = true;
        for (i, &j) in active.iter().enumerate() {
            gamma[j] = sol[k + i];
            if gamma[j] * pattern[j] as f64 <= 0.0 {
                consistent = false;
            }
        }
        if !consistent {
            continue;
        }
        let beta: Vec<f64> = sol.rows(0, k).iter().copied().collect();
        let resid = y - &z * &sol;
        let grad = e.transpose() * &resid * 2.0;
        let slack = 1e-9 * theta.max(1.0);
        if (0..p).any(|j| pattern[j] == 0 && grad[j].abs() > theta + slack) {
            continue;
        }
        let obj = objective(y, x, e, &beta, &gamma, theta);
        if best.as_ref().map_or(true, |b| obj < b.0) {
            best = Some((obj, beta, gamma));
        }
    }
    best.expect("the optimal pattern always satisfies the conditions")
}

/// Cyclic coordinate descent on the joint problem over `[β, γ]` with β
/// unpenalized, without any partialling out.
pub fn joint_cd_oracle(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    e: &DMatrix<f64>,
    theta: f64,
) -> (Vec<f64>, Vec<f64>) {
    let k = x.ncols();
    let p = e.ncols();
    let cols: Vec<DVector<f64>> = x
        .column_iter()
        .chain(e.column_iter())
        .map(|c| c.into_owned())
        .collect();
    let sq: Vec<f64> = cols.iter().map(|c| c.norm_squared()).collect();
    let mut coef = vec![0.0; k + p];
    let mut r = y.clone();
    for _ in 0..2_000_000 {
        let mut change: f64 = 0.0;
        for j in 0..k + p {
            let rho = cols[j].dot(&r) + sq[j] * coef[j];
            let new = if j < k {
                rho / sq[j]
            } else if rho > theta / 2.0 {
                (rho - theta / 2.0) / sq[j]
            } else if rho < -theta / 2.0 {
                (rho + theta / 2.0) / sq[j]
            } else {
                0.0
            };
            let d = new - coef[j];
            if d != 0.0 {
                r.axpy(-d, &cols[j], 1.0);
                coef[j] = new;
                change = change.max(d.abs());
            }
        }
        if change < 1e-14 {
            break;
        }
    }
    (coef[..k].to_vec(), coef[k..].to_vec())
}

/// Stationarity check of a full solution, recomputed from scratch:
/// `X'r = 0`, `2e_j'r = θ sign(γ_j)` on the support and `|2e_j'r| ≤ θ` off it.
pub fn kkt_violation(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    e: &DMatrix<f64>,
    sol: &LassoSolution,
) -> f64 {
    let beta = DVector::from_column_slice(&sol.beta);
    let gamma = DVector::from_column_slice(&sol.gamma);
    let r = y - x * beta - e * &gamma;
    let gx = x.transpose() * &r * 2.0;
    let ge = e.transpose() * &r * 2.0;
    let mut worst = gx.amax();
    for j in 0..gamma.len() {
        let v = if gamma[j] != 0.0 {
            (ge[j] - sol.theta * gamma[j].signum()).abs()
        } else {
            (ge[j].abs() - sol.theta).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

pub fn assert_kkt(y: &DVector<f64>, x: &DMatrix<f64>, e: &DMatrix<f64>, sol: &LassoSolution) {
    let bound = 1e-6 * sol.theta.max(1.0);
    let v = kkt_violation(y, x, e, sol);
    assert!(v <= bound, "KKT violation {v:e} exceeds {bound:e} at theta {}", sol.theta);
}

/// `I - X (X'X)^{-1} X'` from the explicit inverse of the Gram matrix.
pub fn projector(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    if x.ncols() == 0 {
        return DMatrix::identity(n, n);
    }
    let g = (x.transpose() * x).try_inverse().expect("full rank");
    DMatrix::identity(n, n) - x * g * x.transpose()
}

/// Null moments of `m = u'Wu / u'u`, `u = M y`, from the three-trace form
/// `E[m²] = (tr(MW)² + tr(MWMW') + tr((MW)²)) / ((n-k)(n-k+2))`.
pub fn dense_moran_moments(x: &DMatrix<f64>, w: &DMatrix<f64>) -> (f64, f64) {
    let (n, k) = x.shape();
    let m = projector(x);
    let mw = &m * w;
    let d = (n - k) as f64;
    let t = mw.trace();
    let mean = t / d;
    let second = (t * t + (&mw * &m * w.transpose()).trace() + (&mw * &mw).trace()) / (d * (d + 2.0));
    (mean, second - mean * mean)
}
