//! The `esf` command-line tool.

pub mod config;
pub mod manifest;
mod table;

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use esf::estimators::{estimate, CandidateFilter, Dataset, EstimatorOptions};
use esf::io::{self, EigenSidecar};
use esf::montecarlo::{run_grid_on, run_timing_benchmark, timing_csv, RunOptions, TimingConfig};
use esf::weights::{decompose, EigenBasis, SpatialWeights};
use esf::Method;
use serde::Serialize;

use crate::config::{read_config, SimulateConfig};
use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "esf", version, about = "Eigenvector spatial filtering with Moran's-I-tuned Lasso selection")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Master seed. Overrides the seed in a configuration file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads: "auto" or a count. 1 runs everything serially.
    #[arg(long, global = true, env = "ESF_THREADS", default_value = "auto")]
    pub threads: Threads,
    /// Output path (a directory for estimate and simulate, a file otherwise).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Format of the primary tabular artifact of simulate and bench.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threads {
    Auto,
    Count(usize),
}

impl FromStr for Threads {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Threads::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected 'auto' or a positive integer, got '{s}'")),
            Ok(k) => Ok(Threads::Count(k)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizeArg {
    MaxRowSum,
    SpectralRadius,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterArg {
    All,
    PositiveEigs,
    RatioThreshold,
}

impl From<FilterArg> for CandidateFilter {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::All => CandidateFilter::All,
            FilterArg::PositiveEigs => CandidateFilter::PositiveEigs,
            FilterArg::RatioThreshold => CandidateFilter::RatioThreshold,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a weights matrix and store its eigendecomposition.
    Decompose(DecomposeArgs),
    /// Fit one estimator to a data table.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo grid.
    Simulate(SimulateArgs),
    /// Time the selection methods against each other.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Dense matrix or edge list.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_enum, default_value_t = NormalizeArg::MaxRowSum)]
    pub normalize: NormalizeArg,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// CSV table with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column.
    #[arg(long)]
    pub y: String,
    /// Regressor columns, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub x: Vec<String>,
    #[arg(long)]
    pub weights: PathBuf,
    /// Precomputed eigenbasis from `esf decompose`.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long, default_value = "mi_lasso")]
    pub method: String,
    /// Refit OLS on the selected eigenvectors.
    #[arg(long)]
    pub post: bool,
    #[arg(long)]
    pub folds: Option<usize>,
    /// FstepZ stopping threshold on |Z|.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum)]
    pub candidate_filter: Option<FilterArg>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, value_enum, default_value_t = NormalizeArg::MaxRowSum)]
    pub normalize: NormalizeArg,
    /// Do not add an intercept column.
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML configuration. Command-line options override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset grid: A or B.
    #[arg(long)]
    pub setup: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub mu: Vec<f64>,
    /// One lag vector, colon separated (0.6:0.4:0.5). For setup A, a comma
    /// separated list of ρ values to keep.
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub estimators: Vec<String>,
    /// Draw W once per grid point.
    #[arg(long)]
    pub fixed_w: bool,
    /// Use these weights for every replication.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, requires = "weights")]
    pub basis: Option<PathBuf>,
    /// Record mean runtimes per estimator.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![250usize, 500, 1000])]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "mi_lasso,cv_lasso,fstep_z")]
    pub methods: Vec<String>,
    /// Runs per method; the fastest is kept.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Time FstepZ above the size ceiling anyway.
    #[arg(long)]
    pub force: bool,
    #[arg(long, default_value_t = TimingConfig::default().fstep_ceiling)]
    pub fstep_ceiling: usize,
    #[arg(long, default_value_t = 8.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.3)]
    pub rho: f64,
}

pub fn run(cli: Cli) -> Result<()> {
    let parallel = configure_threads(cli.global.threads)?;
    match cli.command {
        Command::Decompose(args) => cmd_decompose(&cli.global, &args),
        Command::Estimate(args) => cmd_estimate(&cli.global, &args),
        Command::Simulate(args) => cmd_simulate(&cli.global, &args, parallel),
        Command::Bench(args) => cmd_bench(&cli.global, &args),
    }
}

/// Returns whether work should be spread over threads.
fn configure_threads(threads: Threads) -> Result<bool> {
    match threads {
        Threads::Auto => Ok(true),
        Threads::Count(1) => Ok(false),
        Threads::Count(k) => {
            // A second call in the same process fails harmlessly.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            Ok(true)
        }
    }
}

fn require_out(global: &Global) -> Result<&Path> {
    global
        .out
        .as_deref()
        .ok_or_else(|| anyhow!("--out is required for this command"))
}

fn load_weights(path: &Path, normalize: NormalizeArg) -> Result<SpatialWeights> {
    let w = io::read_weights(path).with_context(|| format!("cannot load weights {}", path.display()))?;
    Ok(match normalize {
        NormalizeArg::MaxRowSum => w.normalize_max_row_sum()?,
        NormalizeArg::SpectralRadius => w.normalize_spectral_radius()?,
        NormalizeArg::None => w,
    })
}

fn load_basis(path: &Path, w: &SpatialWeights) -> Result<EigenBasis> {
    let basis = io::read_eigenbasis(path).with_context(|| format!("cannot load eigenbasis {}", path.display()))?;
    if basis.n() != w.n() {
        bail!("eigenbasis has n = {} but the weights have n = {}", basis.n(), w.n());
    }
    let (a, b) = (basis.source_norm_factor, w.norm_factor());
    if (a - b).abs() > 1e-12 * a.abs().max(b.abs()) {
        bail!("eigenbasis was computed with normalization factor {a}, the weights use {b}");
    }
    Ok(basis)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Re-read an artifact after writing it so a zero exit status means every
/// output parses.
fn verify(path: &Path) -> Result<()> {
    let fail = |e: &dyn std::fmt::Display| anyhow!("output {} failed validation: {e}", path.display());
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let text = std::fs::read_to_string(path).map_err(|e| fail(&e))?;
            serde_json::from_str::<serde_json::Value>(&text).map_err(|e| fail(&e))?;
        }
        Some("csv") => {
            let mut reader = csv::Reader::from_path(path).map_err(|e| fail(&e))?;
            for record in reader.records() {
                record.map_err(|e| fail(&e))?;
            }
        }
        Some("toml") => {
            config::read_config(path).map_err(|e| fail(&e))?;
        }
        _ => {
            io::read_eigenbasis(path).map_err(|e| fail(&e))?;
        }
    }
    Ok(())
}

fn write_manifest<T: Serialize>(path: &Path, command: &str, config: &T, seed: u64, started: Instant, outputs: &[&Path]) -> Result<()> {
    for output in outputs {
        verify(output)?;
    }
    let manifest = RunManifest::new(command, config, seed, started.elapsed().as_secs_f64(), outputs)?;
    io::write_json(path, &manifest)?;
    verify(path)
}

#[derive(Serialize)]
struct DecomposeConfig<'a> {
    weights: String,
    normalize: &'a str,
}

fn cmd_decompose(global: &Global, args: &DecomposeArgs) -> Result<()> {
    let started = Instant::now();
    let out = require_out(global)?;
    let w = load_weights(&args.weights, args.normalize)?;
    let basis = decompose(&w)?;
    let sidecar_path = sibling(out, "eigenvalues.json");
    let manifest_path = sibling(out, "manifest.json");
    io::write_eigenbasis(out, &basis)?;
    io::write_json(&sidecar_path, &EigenSidecar::of(&basis))?;
    let config = DecomposeConfig {
        weights: args.weights.display().to_string(),
        normalize: normalize_name(args.normalize),
    };
    write_manifest(&manifest_path, "decompose", &config, global.seed.unwrap_or(0), started, &[out, &sidecar_path])?;
    println!(
        "n = {}, normalization factor = {}, eigenvalues in [{:.6}, {:.6}]",
        basis.n(),
        basis.source_norm_factor,
        basis.values.min(),
        basis.values.max()
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn normalize_name(n: NormalizeArg) -> &'static str {
    match n {
        NormalizeArg::MaxRowSum => "max_row_sum",
        NormalizeArg::SpectralRadius => "spectral_radius",
        NormalizeArg::None => "none",
    }
}

#[derive(Serialize)]
struct EstimateConfig {
    data: String,
    y: String,
    x: Vec<String>,
    weights: String,
    basis: Option<String>,
    method: Method,
    intercept: bool,
    normalize: &'static str,
    options: EstimatorOptions,
}

fn cmd_estimate(global: &Global, args: &EstimateArgs) -> Result<()> {
    let started = Instant::now();
    let out = require_out(global)?;
    let mut method: Method = args.method.parse()?;
    if args.post {
        method = method.post();
    }

    let mut options = EstimatorOptions::default();
    if let Some(seed) = global.seed {
        options.cv.seed = seed;
    }
    if let Some(folds) = args.folds {
        options.cv.folds = folds;
    }
    let fstep = &mut options.fstep;
    if let Some(e) = args.epsilon {
        fstep.epsilon = e;
    }
    if let Some(f) = args.candidate_filter {
        fstep.candidate_filter = f.into();
    }
    if let Some(r) = args.ratio {
        fstep.ratio = r;
    }
    if args.max_steps.is_some() {
        fstep.max_steps = args.max_steps;
    }

    let table = io::read_table(&args.data).with_context(|| format!("cannot load data {}", args.data.display()))?;
    let y = table.column(&args.y)?;
    let regressors = table.matrix(&args.x)?;
    let data = if args.no_intercept {
        Dataset::new(y, regressors, args.x.clone())?
    } else {
        Dataset::with_intercept(y, &regressors, &args.x)?
    };
    let w = load_weights(&args.weights, args.normalize)?;
    if w.n() != data.n() {
        bail!("weights have n = {} but the data have {} rows", w.n(), data.n());
    }
    let basis = match &args.basis {
        Some(p) => load_basis(p, &w)?,
        None => decompose(&w)?,
    };

    let report = estimate(method, &data, &basis, &w, &options)?;

    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let report_path = out.join("report.json");
    let coef_path = out.join("coefficients.csv");
    io::write_json(&report_path, &report)?;
    io::write_atomic(&coef_path, report.coefficients_csv().as_bytes())?;
    let config = EstimateConfig {
        data: args.data.display().to_string(),
        y: args.y.clone(),
        x: args.x.clone(),
        weights: args.weights.display().to_string(),
        basis: args.basis.as_ref().map(|p| p.display().to_string()),
        method,
        intercept: !args.no_intercept,
        normalize: normalize_name(args.normalize),
        options,
    };
    write_manifest(
        &out.join("manifest.json"),
        "estimate",
        &config,
        config.options.cv.seed,
        started,
        &[&report_path, &coef_path],
    )?;
    print!("{}", table::report(&report));
    Ok(())
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|s| s.parse::<Method>().map_err(Into::into)).collect()
}

fn parse_rho(text: &str, preset: bool) -> Result<Vec<Vec<f64>>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| anyhow!("'{s}' in --rho is not a number"))
    };
    if preset {
        text.split(',').map(|s| Ok(vec![num(s)?])).collect()
    } else {
        text.split(',')
            .map(|group| group.split(':').map(num).collect::<Result<Vec<f64>>>())
            .collect()
    }
}

fn resolve_simulate(global: &Global, args: &SimulateArgs) -> Result<SimulateConfig> {
    let mut cfg = match &args.config {
        Some(path) => read_config(path)?,
        None => SimulateConfig::default(),
    };
    if let Some(setup) = &args.setup {
        cfg.setup = setup.clone();
    }
    if !args.n.is_empty() {
        cfg.n = args.n.clone();
    }
    if !args.mu.is_empty() {
        cfg.mu = args.mu.clone();
    }
    if let Some(rho) = &args.rho {
        let preset = !cfg.setup.eq_ignore_ascii_case("custom");
        cfg.rho = parse_rho(rho, preset)?;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    if !args.estimators.is_empty() {
        cfg.estimators = parse_methods(&args.estimators)?;
    }
    if args.fixed_w {
        cfg.fixed_w = true;
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_simulate(global: &Global, args: &SimulateArgs, parallel: bool) -> Result<()> {
    let started = Instant::now();
    let out = require_out(global)?;
    let cfg = resolve_simulate(global, args)?;
    let specs = cfg.specs()?;

    let fixed = match &args.weights {
        Some(path) => {
            let w = load_weights(path, NormalizeArg::MaxRowSum)?;
            let basis = match &args.basis {
                Some(b) => load_basis(b, &w)?,
                None => decompose(&w)?,
            };
            Some((w, basis))
        }
        None => None,
    };
    let summary = run_grid_on(
        &specs,
        fixed.as_ref().map(|(w, b)| (w, b)),
        RunOptions {
            parallel,
            record_timing: args.timing,
        },
    )?;

    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let primary = match global.format {
        Format::Csv => {
            let p = out.join("summary.csv");
            io::write_atomic(&p, summary.to_csv().as_bytes())?;
            p
        }
        Format::Json => {
            let p = out.join("summary.json");
            io::write_json(&p, &summary)?;
            p
        }
    };
    let config_path = out.join("config.toml");
    io::write_atomic(&config_path, toml::to_string(&cfg)?.as_bytes())?;
    write_manifest(&out.join("manifest.json"), "simulate", &cfg, cfg.seed, started, &[&primary, &config_path])?;
    print!("{}", table::summary(&summary));
    Ok(())
}

#[derive(Serialize)]
struct BenchConfig {
    n: Vec<usize>,
    methods: Vec<Method>,
    timing: TimingConfig,
}

fn cmd_bench(global: &Global, args: &BenchArgs) -> Result<()> {
    let started = Instant::now();
    let out = require_out(global)?;
    let methods = parse_methods(&args.methods)?;
    let timing = TimingConfig {
        mu: args.mu,
        rho: args.rho,
        seed: global.seed.unwrap_or(0),
        repeats: args.repeats,
        fstep_ceiling: args.fstep_ceiling,
        force: args.force,
        ..TimingConfig::default()
    };
    let rows = run_timing_benchmark(&args.n, &methods, &timing)?;
    match global.format {
        Format::Csv => io::write_atomic(out, timing_csv(&rows).as_bytes())?,
        Format::Json => io::write_json(out, &rows)?,
    }
    let config = BenchConfig {
        n: args.n.clone(),
        methods,
        timing,
    };
    write_manifest(&sibling(out, "manifest.json"), "bench", &config, config.timing.seed, started, &[out])?;
    print!("{}", table::timing(&rows));
    Ok(())
}
