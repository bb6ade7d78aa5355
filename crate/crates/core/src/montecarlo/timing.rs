use serde::{Deserialize, Serialize};

use super::{draw_spatial, simulate_y, simulated_dataset, timed, SimulationSpec};
use crate::error::{EsfError, Result};
use crate::estimators::{estimate, EstimatorOptions, Method};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub mu: f64,
    pub rho: f64,
    pub seed: u64,
    /// Each method is timed this many times and the fastest run is kept.
    pub repeats: usize,
    /// FstepZ is skipped above this n unless `force` is set.
    pub fstep_ceiling: usize,
    pub force: bool,
    pub options: EstimatorOptions,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            mu: 8.0,
            rho: 0.3,
            seed: 0,
            repeats: 1,
            fstep_ceiling: 2000,
            force: false,
            options: EstimatorOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n: usize,
    pub method: Method,
    /// `None` when the method was skipped as infeasible.
    pub seconds: Option<f64>,
    /// Seconds divided by the reference method's seconds at the same n.
    pub relative: Option<f64>,
    pub selected: Option<usize>,
    pub decomposition_seconds: f64,
}

const TIMED_METHODS: [Method; 3] = [Method::MiLasso, Method::CvLasso, Method::FstepZ];

/// Wall time of each method on one shared dataset per n. The
/// eigendecomposition is timed separately and excluded. Relative times are
/// normalized to Mi-Lasso when it is requested, else to the first method.
pub fn run_timing_benchmark(n_list: &[usize], methods: &[Method], cfg: &TimingConfig) -> Result<Vec<TimingRow>> {
    if methods.is_empty() {
        return Err(EsfError::InvalidInput("no methods requested".into()));
    }
    if let Some(m) = methods.iter().find(|m| !TIMED_METHODS.contains(m)) {
        return Err(EsfError::InvalidInput(format!(
            "method '{m}' is not part of the timing benchmark (use mi_lasso, cv_lasso, fstep_z)"
        )));
    }
    let reference = if methods.contains(&Method::MiLasso) {
        Method::MiLasso
    } else {
        methods[0]
    };
    let repeats = cfg.repeats.max(1);
    let mut rows = Vec::new();
    for (g, &n) in n_list.iter().enumerate() {
        let spec = SimulationSpec {
            setup_label: "timing".into(),
            n,
            mu: cfg.mu,
            rho: vec![cfg.rho],
            seed: cfg.seed,
            ..SimulationSpec::default()
        };
        spec.validate()?;
        let (draw, decomposition_seconds) =
            timed(|| draw_spatial(n, cfg.mu, &spec.rho, seed::derive(cfg.seed, &[g as u64, 0])));
        let draw = draw?;
        let mut rng = seed::stream(cfg.seed, &[g as u64, 1]);
        let (y, x) = simulate_y(&spec, &draw.w, &draw.basis, &mut rng)?;
        let data = simulated_dataset(y, &x)?;

        let mut block = Vec::new();
        for &method in methods {
            if method == Method::FstepZ && n > cfg.fstep_ceiling && !cfg.force {
                block.push(TimingRow {
                    n,
                    method,
                    seconds: None,
                    relative: None,
                    selected: None,
                    decomposition_seconds,
                });
                continue;
            }
            let mut best = f64::INFINITY;
            let mut selected = 0;
            for _ in 0..repeats {
                let report = estimate(method, &data, &draw.basis, &draw.w, &cfg.options)?;
                best = best.min(report.runtime_seconds);
                selected = report.selected_eigs.len();
            }
            block.push(TimingRow {
                n,
                method,
                seconds: Some(best),
                relative: None,
                selected: Some(selected),
                decomposition_seconds,
            });
        }
        let base = block
            .iter()
            .find(|r| r.method == reference)
            .and_then(|r| r.seconds);
        for row in &mut block {
            row.relative = match (row.seconds, base) {
                (Some(s), Some(b)) if b > 0.0 => Some(s / b),
                _ => None,
            };
        }
        rows.extend(block);
    }
    Ok(rows)
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("n,method,seconds,relative,selected,decomposition_seconds,status\n");
    for r in rows {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |v| v.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.n,
            r.method,
            opt(r.seconds),
            opt(r.relative),
            r.selected.map_or("NA".to_string(), |s| s.to_string()),
            r.decomposition_seconds,
            if r.seconds.is_some() { "ok" } else { "infeasible" }
        ));
    }
    out
}
