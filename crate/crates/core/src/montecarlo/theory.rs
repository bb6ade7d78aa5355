//! Finite-sample checks of the Mi-Lasso estimation-error and sign-recovery
//! results on an exactly sparse design
//!
//! ```text
//! y = 1 + x + E_Ω γ_Ω + σ v,   |Ω| = s,   γ_Ω = g n^a (+1, -1, +1, ...)
//! ```
//!
//! Ω holds the eigenvectors whose unnormalized eigenvalue is closest to
//! `target_eigenvalue`. Coefficients refer to unit-norm eigenvectors; errors
//! are reported for the unit-variance parametrization (`γ / √n`), where the
//! coefficients shrink as `n^(a - 1/2)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EsfError, Result};
use crate::estimators::{Dataset, MiLassoConfig};
use crate::lasso::PartialledProblem;
use crate::linalg::{median, OrthoBasis};
use crate::moran::{standardized_moran_with, ResidualMaker};
use crate::seed;
use crate::weights::{build_bernoulli_swm, decompose, EigenBasis, SpatialWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub mu: f64,
    pub s: usize,
    pub g: f64,
    pub exponent: f64,
    pub sigma: f64,
    pub target_eigenvalue: f64,
    /// Random cone directions for the restricted-eigenvalue heuristic.
    pub re_directions: usize,
    /// Cone constant b̄ in `||Δ_Ωᶜ||₁ ≤ b̄ ||Δ_Ω||₁`.
    pub cone_b: f64,
    pub seed: u64,
    /// Draw one W per sample size and reuse it across replications.
    pub fixed_w: bool,
    pub lasso: MiLassoConfig,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            n_list: vec![100, 200, 400, 800],
            reps: 200,
            mu: 8.0,
            s: 3,
            g: 0.3,
            exponent: 0.4,
            sigma: 0.1,
            target_eigenvalue: 1.0,
            re_directions: 10_000,
            cone_b: 3.0,
            seed: 0,
            fixed_w: false,
            lasso: MiLassoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub n: usize,
    pub reps_completed: usize,
    pub failures: usize,
    pub sign_recovery: f64,
    pub median_l2: f64,
    pub median_l1: f64,
    pub mean_selected: f64,
    pub median_z: f64,
    /// Smallest `||ẼΔ|| / ||Δ||` over sampled cone directions on the first
    /// replication; an upper bound on the restricted eigenvalue.
    pub re_upper_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub rows: Vec<TheoryRow>,
    /// Empty when every trend check passed.
    pub violations: Vec<String>,
}

struct RepOutcome {
    sign_ok: bool,
    l2: f64,
    l1: f64,
    selected: usize,
    z: f64,
    re: Option<f64>,
}

fn draw_weights(cfg: &TheoryConfig, n: usize, seed_value: u64) -> Result<(SpatialWeights, EigenBasis)> {
    let w = build_bernoulli_swm(n, cfg.mu, seed_value)?.normalize_max_row_sum()?;
    let basis = decompose(&w)?;
    Ok((w, basis))
}

fn one_rep(
    cfg: &TheoryConfig,
    g_index: u64,
    n: usize,
    rep: u64,
    shared: Option<&(SpatialWeights, EigenBasis)>,
) -> Result<RepOutcome> {
    let own;
    let (w, basis) = match shared {
        Some(pair) => pair,
        None => {
            own = draw_weights(cfg, n, seed::derive(cfg.seed, &[g_index, rep, 0]))?;
            &own
        }
    };
    let scale = w.norm_factor();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let da = (basis.values[a] * scale - cfg.target_eigenvalue).abs();
        let db = (basis.values[b] * scale - cfg.target_eigenvalue).abs();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let omega: Vec<usize> = order[..cfg.s.min(n)].to_vec();
    let magnitude = cfg.g * (n as f64).powf(cfg.exponent);
    let mut gamma0 = DVector::zeros(n);
    for (i, &j) in omega.iter().enumerate() {
        gamma0[j] = if i % 2 == 0 { magnitude } else { -magnitude };
    }

    let mut rng = seed::stream(cfg.seed, &[g_index, rep, 1]);
    let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DVector::from_element(n, 1.0) + &x + &basis.vectors * &gamma0 + v * cfg.sigma;
    let data = Dataset::with_intercept(y, &DMatrix::from_column_slice(n, 1, x.as_slice()), &["x".into()])?;

    let maker = ResidualMaker::new(&data.x)?;
    let z = standardized_moran_with(&maker, &data.y, w)?.z;
    if z.abs() < crate::estimators::Z_ZERO_THRESHOLD {
        return Err(EsfError::UndefinedMoran("Z is zero".into()));
    }
    let penalty = cfg.lasso.penalty_scale.penalty(1.0 / (z * z), n);
    let reduced = PartialledProblem::new(&data.x, &data.y, &basis.vectors)?;
    let fit = reduced.solve(penalty, None, &cfg.lasso.solver)?;
    let diff = &fit.gamma - &gamma0;
    let root_n = (n as f64).sqrt();
    let sign_ok = fit
        .gamma
        .iter()
        .zip(gamma0.iter())
        .all(|(a, b)| sign(*a) == sign(*b));
    let re = (rep == 0).then(|| {
        restricted_eigen_upper_bound(
            &basis.vectors,
            reduced.basis(),
            &omega,
            cfg.cone_b,
            cfg.re_directions,
            seed::derive(cfg.seed, &[g_index, rep, 2]),
        )
    });
    Ok(RepOutcome {
        sign_ok,
        l2: diff.norm() / root_n,
        l1: diff.lp_norm(1) / root_n,
        selected: fit.gamma.iter().filter(|g| **g != 0.0).count(),
        z,
        re,
    })
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Minimum of `||M_X E Δ|| / ||Δ||` over random Δ in the cone
/// `||Δ_Ωᶜ||₁ ≤ b̄ ||Δ_Ω||₁`. Because E is orthogonal,
/// `||M_X E Δ||² = ||Δ||² - ||Q'EΔ||²`, so each direction costs O(kn).
pub fn restricted_eigen_upper_bound(
    e: &DMatrix<f64>,
    x_basis: &OrthoBasis,
    omega: &[usize],
    cone_b: f64,
    directions: usize,
    seed_value: u64,
) -> f64 {
    let n = e.ncols();
    if omega.is_empty() || directions == 0 {
        return f64::NAN;
    }
    let a = x_basis.q().tr_mul(e);
    let mut in_omega = vec![false; n];
    for &j in omega {
        in_omega[j] = true;
    }
    let off: Vec<usize> = (0..n).filter(|&j| !in_omega[j]).collect();
    let mut rng = seed::stream(seed_value, &[]);
    let mut best = f64::INFINITY;
    let mut delta = DVector::zeros(n);
    for _ in 0..directions {
        delta.fill(0.0);
        let mut l1_on = 0.0;
        for &j in omega {
            let d: f64 = rng.sample(StandardNormal);
            delta[j] = d;
            l1_on += d.abs();
        }
        if !off.is_empty() {
            // random sparse-ish direction off the support, scaled to a
            // uniformly drawn fraction of the cone budget
            let support = rng.random_range(1..=off.len().min(4 * omega.len()).max(1));
            let mut l1_off = 0.0;
            let mut picked = Vec::with_capacity(support);
            for _ in 0..support {
                let j = off[rng.random_range(0..off.len())];
                let d: f64 = rng.sample(StandardNormal);
                delta[j] += d;
                picked.push(j);
            }
            picked.sort_unstable();
            picked.dedup();
            for &j in &picked {
                l1_off += delta[j].abs();
            }
            if l1_off > 0.0 {
                let target = rng.random::<f64>() * cone_b * l1_on;
                let f = target / l1_off;
                for &j in &picked {
                    delta[j] *= f;
                }
            }
        }
        let norm_sq = delta.norm_squared();
        let proj = (&a * &delta).norm_squared();
        let ratio = ((norm_sq - proj).max(0.0) / norm_sq).sqrt();
        best = best.min(ratio);
    }
    best
}

/// Run the sparse-recovery experiment over `cfg.n_list` and check the
/// expected trends: errors non-increasing in n, sign recovery
/// non-decreasing in n and at least 0.9 at the largest n.
pub fn theory_suite(cfg: &TheoryConfig, parallel: bool) -> Result<TheoryReport> {
    if cfg.n_list.is_empty() || cfg.reps == 0 {
        return Err(EsfError::InvalidInput("theory suite needs n values and reps".into()));
    }
    if cfg.s + 5 >= *cfg.n_list.iter().min().expect("non-empty") {
        return Err(EsfError::InvalidInput("s is too large for the smallest n".into()));
    }
    let mut rows = Vec::new();
    for (g, &n) in cfg.n_list.iter().enumerate() {
        let shared = if cfg.fixed_w {
            Some(draw_weights(cfg, n, seed::derive(cfg.seed, &[g as u64, u64::MAX, 0]))?)
        } else {
            None
        };
        let run = |r: u64| one_rep(cfg, g as u64, n, r, shared.as_ref()).ok();
        let outcomes: Vec<Option<RepOutcome>> = if parallel {
            (0..cfg.reps as u64).into_par_iter().map(run).collect()
        } else {
            (0..cfg.reps as u64).map(run).collect()
        };
        let ok: Vec<&RepOutcome> = outcomes.iter().flatten().collect();
        let count = ok.len().max(1) as f64;
        let collect = |f: fn(&RepOutcome) -> f64| ok.iter().map(|o| f(o)).collect::<Vec<_>>();
        rows.push(TheoryRow {
            n,
            reps_completed: ok.len(),
            failures: cfg.reps - ok.len(),
            sign_recovery: ok.iter().filter(|o| o.sign_ok).count() as f64 / count,
            median_l2: median(&collect(|o| o.l2)),
            median_l1: median(&collect(|o| o.l1)),
            mean_selected: ok.iter().map(|o| o.selected as f64).sum::<f64>() / count,
            median_z: median(&collect(|o| o.z)),
            re_upper_bound: outcomes
                .first()
                .and_then(|o| o.as_ref())
                .and_then(|o| o.re)
                .unwrap_or(f64::NAN),
        });
    }

    let mut violations = Vec::new();
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.median_l2 > a.median_l2 {
            violations.push(format!("median l2 error rose from n={} to n={}", a.n, b.n));
        }
        if b.median_l1 > a.median_l1 {
            violations.push(format!("median l1 error rose from n={} to n={}", a.n, b.n));
        }
        if b.sign_recovery < a.sign_recovery {
            violations.push(format!("sign recovery fell from n={} to n={}", a.n, b.n));
        }
    }
    let last = rows.last().expect("non-empty");
    if last.sign_recovery < 0.9 {
        violations.push(format!(
            "sign recovery {:.3} below 0.9 at n={}",
            last.sign_recovery, last.n
        ));
    }
    Ok(TheoryReport { rows, violations })
}
