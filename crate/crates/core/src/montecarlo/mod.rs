//! Monte Carlo experiments on the higher-order spatial Durbin DGP
//!
//! ```text
//! S₁ y = β x + ψ W x + S₂⁻¹ v,   S₁ = I - Σᵢ ρᵢ Wⁱ,   S₂ = I - δ W
//! ```
//!
//! with `x, v ~ N(0, I)` and `W` a max-row-sum-normalized Bernoulli graph.

mod theory;
mod timing;

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use theory::{theory_suite, TheoryConfig, TheoryReport, TheoryRow};
pub use timing::{run_timing_benchmark, timing_csv, TimingConfig, TimingRow};

use crate::error::{EsfError, Result};
use crate::estimators::{estimate, post_refit, Dataset, EstimationReport, EstimatorOptions, Method};
use crate::linalg::median;
use crate::seed;
use crate::weights::{build_bernoulli_swm, decompose, EigenBasis, SpatialWeights};

/// `S₁` is rejected (and W redrawn) above this condition number.
pub const MAX_CONDITION: f64 = 1e10;
pub const MAX_DGP_REDRAWS: usize = 50;

/// Name of the regressor whose coefficient is tracked.
pub const X_NAME: &str = "x";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub setup_label: String,
    pub n: usize,
    pub mu: f64,
    /// ρ₁…ρ_p; the lag order p is its length.
    pub rho: Vec<f64>,
    pub beta: f64,
    pub psi: f64,
    pub delta: f64,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<Method>,
    /// Draw W once per grid point instead of once per replication.
    pub fixed_w: bool,
    pub options: EstimatorOptions,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            setup_label: "custom".into(),
            n: 100,
            mu: 8.0,
            rho: vec![0.5],
            beta: 1.0,
            psi: 0.9,
            delta: 0.0,
            reps: 200,
            seed: 0,
            estimators: default_estimators(),
            fixed_w: false,
            options: EstimatorOptions::default(),
        }
    }
}

pub fn default_estimators() -> Vec<Method> {
    vec![
        Method::MiLasso,
        Method::MiPlasso,
        Method::CvLasso,
        Method::CvPlasso,
        Method::FstepZ,
    ]
}

pub const SETUP_A_RHO: [f64; 7] = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const SETUP_B_RHO: [f64; 3] = [0.6, 0.4, 0.5];
pub const GRID_N: [usize; 3] = [100, 250, 500];
pub const GRID_MU: [f64; 3] = [4.0, 8.0, 12.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setup {
    A,
    B,
}

impl SimulationSpec {
    pub fn p(&self) -> usize {
        self.rho.len()
    }

    pub fn setup_a(n: usize, mu: f64, rho1: f64) -> Self {
        Self {
            setup_label: "A".into(),
            n,
            mu,
            rho: vec![rho1],
            ..Self::default()
        }
    }

    pub fn setup_b(n: usize, mu: f64) -> Self {
        Self {
            setup_label: "B".into(),
            n,
            mu,
            rho: SETUP_B_RHO.to_vec(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EsfError::InvalidInput(m));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.n < 10 {
            return bad(format!("n must be at least 10, got {}", self.n));
        }
        if !(self.mu > 0.0 && self.mu <= self.n as f64) {
            return bad(format!("mu must lie in (0, n], got {}", self.mu));
        }
        if self.rho.is_empty() {
            return bad("rho needs at least one lag coefficient".into());
        }
        let all = self.rho.iter().chain([&self.beta, &self.psi, &self.delta]);
        if all.clone().any(|v| !v.is_finite()) {
            return bad("non-finite DGP parameter".into());
        }
        if self.delta.abs() >= 1.0 {
            return bad(format!("|delta| must be below 1, got {}", self.delta));
        }
        if self.estimators.is_empty() {
            return bad("no estimators requested".into());
        }
        Ok(())
    }
}

/// Full preset grid: every (n, μ[, ρ]) combination.
pub fn preset_grid(setup: Setup, reps: usize, seed_value: u64) -> Vec<SimulationSpec> {
    let mut specs = Vec::new();
    for &n in &GRID_N {
        for &mu in &GRID_MU {
            match setup {
                Setup::A => {
                    for &rho in &SETUP_A_RHO {
                        specs.push(SimulationSpec {
                            reps,
                            seed: seed_value,
                            ..SimulationSpec::setup_a(n, mu, rho)
                        });
                    }
                }
                Setup::B => specs.push(SimulationSpec {
                    reps,
                    seed: seed_value,
                    ..SimulationSpec::setup_b(n, mu)
                }),
            }
        }
    }
    specs
}

/// Weights and eigenbasis for one replication.
#[derive(Debug, Clone)]
pub struct SpatialDraw {
    pub w: SpatialWeights,
    pub basis: EigenBasis,
    /// `1 - Σ ρᵢ λⁱ` for every eigenvalue, i.e. the spectrum of S₁.
    pub s1_spectrum: DVector<f64>,
    pub redraws: usize,
}

fn s1_spectrum(basis: &EigenBasis, rho: &[f64]) -> DVector<f64> {
    basis.values.map(|l| {
        let mut acc = 1.0;
        let mut pow = 1.0;
        for r in rho {
            pow *= l;
            acc -= r * pow;
        }
        acc
    })
}

fn condition(spectrum: &DVector<f64>) -> f64 {
    let max = spectrum.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = spectrum.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

impl SpatialDraw {
    /// Wrap given weights and their basis, checking that S₁ is well conditioned.
    pub fn from_parts(w: SpatialWeights, basis: EigenBasis, rho: &[f64]) -> Result<Self> {
        let spectrum = s1_spectrum(&basis, rho);
        let cond = condition(&spectrum);
        if cond > MAX_CONDITION {
            return Err(EsfError::IllConditioned(cond));
        }
        Ok(Self {
            w,
            basis,
            s1_spectrum: spectrum,
            redraws: 0,
        })
    }
}

/// Draw a normalized Bernoulli W whose S₁ is well conditioned, redrawing
/// up to [`MAX_DGP_REDRAWS`] times.
pub fn draw_spatial(n: usize, mu: f64, rho: &[f64], seed_value: u64) -> Result<SpatialDraw> {
    let mut worst = 0.0;
    for attempt in 0..=MAX_DGP_REDRAWS {
        let w = build_bernoulli_swm(n, mu, seed::derive(seed_value, &[attempt as u64]))?
            .normalize_max_row_sum()?;
        let basis = decompose(&w)?;
        let spectrum = s1_spectrum(&basis, rho);
        let cond = condition(&spectrum);
        if cond <= MAX_CONDITION {
            return Ok(SpatialDraw {
                w,
                basis,
                s1_spectrum: spectrum,
                redraws: attempt,
            });
        }
        worst = cond;
    }
    Err(EsfError::IllConditioned(worst))
}

/// One draw of `(y, x)` from the DGP. `S₁ = E diag(1 - Σρᵢλⁱ) E'` is
/// assembled from the eigenbasis and the system is solved by LU.
pub fn simulate_y<R: Rng + ?Sized>(
    spec: &SimulationSpec,
    w: &SpatialWeights,
    basis: &EigenBasis,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = spec.n;
    if w.n() != n || basis.n() != n {
        return Err(EsfError::DimensionMismatch {
            what: "weights dimension vs spec n",
            expected: n,
            got: w.n(),
        });
    }
    let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let wx = w.values() * &x;
    let r = if spec.delta == 0.0 {
        v
    } else {
        let s2 = DMatrix::identity(n, n) - w.values() * spec.delta;
        s2.lu()
            .solve(&v)
            .ok_or(EsfError::IllConditioned(f64::INFINITY))?
    };
    let rhs = &x * spec.beta + wx * spec.psi + r;
    let spectrum = s1_spectrum(basis, &spec.rho);
    let cond = condition(&spectrum);
    if cond > MAX_CONDITION {
        return Err(EsfError::IllConditioned(cond));
    }
    let s1 = s1_matrix(basis, &spectrum);
    let y = s1
        .lu()
        .solve(&rhs)
        .ok_or(EsfError::IllConditioned(cond))?;
    Ok((y, x))
}

/// `I - Σ ρᵢ Wⁱ` through the eigenbasis.
pub fn s1_matrix(basis: &EigenBasis, spectrum: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = basis.vectors.clone();
    for (mut col, s) in scaled.column_iter_mut().zip(spectrum.iter()) {
        col *= *s;
    }
    scaled * basis.vectors.transpose()
}

/// Regression data for a simulated draw: intercept plus `x`.
pub fn simulated_dataset(y: DVector<f64>, x: &DVector<f64>) -> Result<Dataset> {
    let n = x.len();
    Dataset::with_intercept(y, &DMatrix::from_column_slice(n, 1, x.as_slice()), &[X_NAME.to_string()])
}

/// Per-estimator outcome of a replication.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub beta: f64,
    pub selected: usize,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub redraws: usize,
    /// Aligned with `spec.estimators`; `None` marks a failed fit.
    pub fits: Vec<Option<FitOutcome>>,
}

/// Run every requested estimator on one replication. Lasso and post-Lasso
/// variants of the same procedure share the Lasso fit.
pub fn run_replication(spec: &SimulationSpec, grid_index: u64, rep: u64) -> ReplicationOutcome {
    run_replication_on(spec, grid_index, rep, None)
}

/// [`run_replication`] on a supplied weights matrix instead of a random draw.
pub fn run_replication_on(
    spec: &SimulationSpec,
    grid_index: u64,
    rep: u64,
    fixed: Option<&SpatialDraw>,
) -> ReplicationOutcome {
    let failed = |redraws| ReplicationOutcome {
        redraws,
        fits: vec![None; spec.estimators.len()],
    };
    let drawn;
    let draw = match fixed {
        Some(d) => d,
        None => {
            let w_seed = if spec.fixed_w {
                seed::derive(spec.seed, &[grid_index, u64::MAX])
            } else {
                seed::derive(spec.seed, &[grid_index, rep, 0])
            };
            let Ok(d) = draw_spatial(spec.n, spec.mu, &spec.rho, w_seed) else {
                return failed(MAX_DGP_REDRAWS);
            };
            drawn = d;
            &drawn
        }
    };
    let mut rng = seed::stream(spec.seed, &[grid_index, rep, 1]);
    let Ok((y, x)) = simulate_y(spec, &draw.w, &draw.basis, &mut rng) else {
        return failed(draw.redraws);
    };
    let Ok(data) = simulated_dataset(y, &x) else {
        return failed(draw.redraws);
    };
    let mut options = spec.options.clone();
    options.cv.seed = seed::derive(spec.seed, &[grid_index, rep, 2]);

    let mut cache: BTreeMap<Method, Option<EstimationReport>> = BTreeMap::new();
    let mut fits = Vec::with_capacity(spec.estimators.len());
    for &method in &spec.estimators {
        let base = match method {
            Method::MiPlasso => Method::MiLasso,
            Method::CvPlasso => Method::CvLasso,
            other => other,
        };
        let shared = base != method && spec.estimators.contains(&base);
        let report = if shared {
            let lasso = cache
                .entry(base)
                .or_insert_with(|| estimate(base, &data, &draw.basis, &draw.w, &options).ok());
            lasso
                .as_ref()
                .and_then(|r| post_refit(r, &data, &draw.basis, &draw.w).ok())
        } else {
            cache
                .entry(method)
                .or_insert_with(|| estimate(method, &data, &draw.basis, &draw.w, &options).ok())
                .clone()
        };
        fits.push(report.and_then(|r| {
            let beta = r.beta(X_NAME)?;
            beta.is_finite().then_some(FitOutcome {
                beta,
                selected: r.selected_eigs.len(),
                runtime_seconds: r.runtime_seconds,
            })
        }));
    }
    ReplicationOutcome {
        redraws: draw.redraws,
        fits,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub parallel: bool,
    /// Record mean wall time per estimator. Timings vary between runs, so
    /// they are left out unless asked for.
    pub record_timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallel: true,
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setup: String,
    pub n: usize,
    pub mu: f64,
    pub rho: Vec<f64>,
    pub estimator: Method,
    pub bias: f64,
    pub mse: f64,
    pub mean_selected: f64,
    pub median_selected: f64,
    pub mean_runtime_seconds: Option<f64>,
    pub reps_completed: usize,
    pub failures: usize,
    pub redraws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub rows: Vec<SummaryRow>,
}

impl SimulationSummary {
    pub fn row(&self, setup_n_mu: (&str, usize, f64), rho: &[f64], method: Method) -> Option<&SummaryRow> {
        let (setup, n, mu) = setup_n_mu;
        self.rows.iter().find(|r| {
            r.setup == setup && r.n == n && r.mu == mu && r.rho == rho && r.estimator == method
        })
    }

    /// `setup,n,mu,rho1..rhoP,estimator,bias,mse,mean_selected,median_selected,mean_runtime_s,failures,reps_completed,redraws`
    /// with P the largest lag order in the summary. Missing values are `NA`.
    pub fn to_csv(&self) -> String {
        let p = self.rows.iter().map(|r| r.rho.len()).max().unwrap_or(1);
        let mut out = String::from("setup,n,mu");
        for i in 1..=p {
            out.push_str(&format!(",rho{i}"));
        }
        out.push_str(",estimator,bias,mse,mean_selected,median_selected,mean_runtime_s,failures,reps_completed,redraws\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}", r.setup, r.n, r.mu));
            for i in 0..p {
                match r.rho.get(i) {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push_str(",NA"),
                }
            }
            out.push_str(&format!(
                ",{},{},{},{},{},{},{},{},{}\n",
                r.estimator,
                na(r.bias),
                na(r.mse),
                na(r.mean_selected),
                na(r.median_selected),
                r.mean_runtime_seconds.map_or("NA".to_string(), na),
                r.failures,
                r.reps_completed,
                r.redraws
            ));
        }
        out
    }
}

fn na(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "NA".into()
    }
}

/// Aggregate the replications of one grid point (in replication order).
pub fn summarize(spec: &SimulationSpec, outcomes: &[ReplicationOutcome], record_timing: bool) -> Vec<SummaryRow> {
    let redraws = outcomes.iter().map(|o| o.redraws).sum();
    spec.estimators
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let ok: Vec<&FitOutcome> = outcomes.iter().filter_map(|o| o.fits[m].as_ref()).collect();
            let count = ok.len() as f64;
            let (bias, mse, mean_sel, med_sel, runtime) = if ok.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            } else {
                let err: Vec<f64> = ok.iter().map(|f| f.beta - spec.beta).collect();
                let sel: Vec<f64> = ok.iter().map(|f| f.selected as f64).collect();
                (
                    err.iter().sum::<f64>() / count,
                    err.iter().map(|e| e * e).sum::<f64>() / count,
                    sel.iter().sum::<f64>() / count,
                    median(&sel),
                    ok.iter().map(|f| f.runtime_seconds).sum::<f64>() / count,
                )
            };
            SummaryRow {
                setup: spec.setup_label.clone(),
                n: spec.n,
                mu: spec.mu,
                rho: spec.rho.clone(),
                estimator: method,
                bias,
                mse,
                mean_selected: mean_sel,
                median_selected: med_sel,
                mean_runtime_seconds: record_timing.then_some(runtime),
                reps_completed: ok.len(),
                failures: outcomes.len() - ok.len(),
                redraws,
            }
        })
        .collect()
}

/// Run every grid point. Replications are independent and seeded by
/// `(seed, grid index, replication)`, so serial and parallel runs agree.
pub fn run_grid(specs: &[SimulationSpec], opts: RunOptions) -> Result<SimulationSummary> {
    run_grid_on(specs, None, opts)
}

/// [`run_grid`] with every replication on the supplied weights and their
/// eigenbasis. The weights dimension must match every spec's n.
pub fn run_grid_on(
    specs: &[SimulationSpec],
    fixed: Option<(&SpatialWeights, &EigenBasis)>,
    opts: RunOptions,
) -> Result<SimulationSummary> {
    for spec in specs {
        spec.validate()?;
    }
    let mut rows = Vec::new();
    for (g, spec) in specs.iter().enumerate() {
        let draw = match fixed {
            Some((w, b)) => Some(SpatialDraw::from_parts(w.clone(), b.clone(), &spec.rho)?),
            None => None,
        };
        if let Some(d) = &draw {
            if d.w.n() != spec.n {
                return Err(EsfError::DimensionMismatch {
                    what: "supplied weights vs spec n",
                    expected: spec.n,
                    got: d.w.n(),
                });
            }
        }
        let outcomes = run_grid_point_on(spec, g as u64, opts.parallel, draw.as_ref());
        rows.extend(summarize(spec, &outcomes, opts.record_timing));
    }
    Ok(SimulationSummary { rows })
}

pub fn run_grid_point(spec: &SimulationSpec, grid_index: u64, parallel: bool) -> Vec<ReplicationOutcome> {
    run_grid_point_on(spec, grid_index, parallel, None)
}

fn run_grid_point_on(
    spec: &SimulationSpec,
    grid_index: u64,
    parallel: bool,
    fixed: Option<&SpatialDraw>,
) -> Vec<ReplicationOutcome> {
    let reps = spec.reps as u64;
    let run = |r| run_replication_on(spec, grid_index, r, fixed);
    if parallel {
        (0..reps).into_par_iter().map(run).collect()
    } else {
        (0..reps).map(run).collect()
    }
}

/// Seconds spent on a closure; used where decomposition must be timed apart
/// from estimation.
pub(crate) fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}
