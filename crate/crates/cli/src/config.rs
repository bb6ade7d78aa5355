//! Simulation configuration files (TOML) and their resolution into grid
//! points.

use std::path::Path;

use anyhow::{bail, Context, Result};
use esf::estimators::EstimatorOptions;
use esf::montecarlo::{default_estimators, preset_grid, Setup, SimulationSpec};
use esf::Method;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// `"A"`, `"B"`, or `"custom"` for an explicit n × mu × rho grid.
    pub setup: String,
    /// Sample sizes. For the presets, restricts the preset grid.
    pub n: Vec<usize>,
    pub mu: Vec<f64>,
    /// Lag coefficient vectors (one per grid point). For setup A, the ρ₁
    /// values to keep.
    pub rho: Vec<Vec<f64>>,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<Method>,
    pub fixed_w: bool,
    pub beta: f64,
    pub psi: f64,
    pub delta: f64,
    pub options: EstimatorOptions,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let spec = SimulationSpec::default();
        Self {
            setup: "custom".into(),
            n: Vec::new(),
            mu: Vec::new(),
            rho: Vec::new(),
            reps: spec.reps,
            seed: 0,
            estimators: default_estimators(),
            fixed_w: false,
            beta: spec.beta,
            psi: spec.psi,
            delta: spec.delta,
            options: EstimatorOptions::default(),
        }
    }
}

/// Every key path in `given` that the default configuration does not have.
pub fn unknown_keys(given: &Value, known: &Value) -> Vec<String> {
    fn walk(given: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
        let (Value::Object(g), Value::Object(k)) = (given, known) else {
            return;
        };
        for (key, value) in g {
            let path = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            match k.get(key) {
                Some(reference) => walk(value, reference, &path, out),
                None => out.push(path),
            }
        }
    }
    let mut out = Vec::new();
    walk(given, known, "", &mut out);
    out
}

pub fn parse_config(text: &str) -> Result<SimulateConfig> {
    let raw: toml::Value = toml::from_str(text).context("config is not valid TOML")?;
    let given = serde_json::to_value(&raw)?;
    let known = serde_json::to_value(SimulateConfig::default())?;
    let unknown = unknown_keys(&given, &known);
    if !unknown.is_empty() {
        bail!("unknown configuration keys: {}", unknown.join(", "));
    }
    raw.try_into().context("invalid configuration value")
}

pub fn read_config(path: &Path) -> Result<SimulateConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

fn setup_of(label: &str) -> Result<Option<Setup>> {
    match label.to_ascii_uppercase().as_str() {
        "A" => Ok(Some(Setup::A)),
        "B" => Ok(Some(Setup::B)),
        "CUSTOM" | "" => Ok(None),
        other => bail!("unknown setup '{other}' (expected A, B or custom)"),
    }
}

impl SimulateConfig {
    /// Expand into grid points, in grid order.
    pub fn specs(&self) -> Result<Vec<SimulationSpec>> {
        if self.estimators.is_empty() {
            bail!("no estimators requested");
        }
        let base = |mut spec: SimulationSpec| {
            spec.reps = self.reps;
            spec.seed = self.seed;
            spec.estimators = self.estimators.clone();
            spec.fixed_w = self.fixed_w;
            spec.beta = self.beta;
            spec.psi = self.psi;
            spec.delta = self.delta;
            spec.options = self.options.clone();
            spec
        };
        let specs: Vec<SimulationSpec> = match setup_of(&self.setup)? {
            Some(setup) => {
                if setup == Setup::B && !self.rho.is_empty() {
                    bail!("setup B fixes rho = (0.6, 0.4, 0.5); remove the rho restriction");
                }
                if self.rho.iter().any(|r| r.len() != 1) {
                    bail!("setup A rho restrictions are single values");
                }
                let grid = preset_grid(setup, self.reps, self.seed);
                let keep: Vec<SimulationSpec> = grid
                    .into_iter()
                    .filter(|s| self.n.is_empty() || self.n.contains(&s.n))
                    .filter(|s| self.mu.is_empty() || self.mu.contains(&s.mu))
                    .filter(|s| self.rho.is_empty() || self.rho.iter().any(|r| r[0] == s.rho[0]))
                    .map(base)
                    .collect();
                if keep.is_empty() {
                    bail!("the n/mu/rho restrictions leave no grid points of setup {:?}", setup);
                }
                keep
            }
            None => {
                if self.n.is_empty() || self.mu.is_empty() || self.rho.is_empty() {
                    bail!("a custom grid needs n, mu and rho");
                }
                let mut out = Vec::new();
                for &n in &self.n {
                    for &mu in &self.mu {
                        for rho in &self.rho {
                            out.push(base(SimulationSpec {
                                setup_label: "custom".into(),
                                n,
                                mu,
                                rho: rho.clone(),
                                ..SimulationSpec::default()
                            }));
                        }
                    }
                }
                out
            }
        };
        for spec in &specs {
            spec.validate()?;
        }
        Ok(specs)
    }
}
