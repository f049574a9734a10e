//! Command-line surface for tvmix: `fit`, `cv`, `simulate`, `bench`,
//! `evaluate` and `theory-check`.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use tvmix_core::{InitMethod, KernelFamily, Method};

pub mod commands;
pub mod config;

pub use config::{RunConfig, ScenarioKind};

/// Bad or missing arguments; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A theory check ran but a verdict failed under `--strict`.
#[derive(Debug)]
pub struct VerdictFailed(pub String);

impl fmt::Display for VerdictFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerdictFailed {}

fn parse_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|_| format!("unknown value `{s}`"))
}

fn parse_kernel(s: &str) -> Result<KernelFamily, String> {
    parse_name(s)
}

fn parse_init(s: &str) -> Result<InitMethod, String> {
    parse_name(s)
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: tvmix_core::Error| e.to_string())
}

fn parse_scenario(s: &str) -> Result<ScenarioKind, String> {
    parse_name(s)
}

/// `1+8` → `[1, 8]`.
fn parse_subset(s: &str) -> Result<Vec<usize>, String> {
    s.split('+')
        .map(|p| match p.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("bad cluster number `{p}` in `{s}` (clusters are 1-based)")),
            Ok(v) => Ok(v),
        })
        .collect()
}

#[derive(Debug, Parser)]
#[command(name = "tvmix", version, about = "Kernel-smoothed EM for time-varying Gaussian mixtures")]
pub struct Cli {
    /// JSON file of default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a kernel-smoothed mixture to a series.
    Fit(FitArgs),
    /// Cross-validate h_mu and h_pi over a grid with h_sigma fixed.
    Cv(CvArgs),
    /// Generate a synthetic labeled series.
    Simulate(SimulateArgs),
    /// Score kernel EM and the baselines on simulated series.
    Bench(BenchArgs),
    /// Biomass table and confusion matrix for a fit.
    Evaluate(EvaluateArgs),
    /// Monte-Carlo checks of the oracle estimator.
    TheoryCheck(TheoryArgs),
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// Number of clusters.
    #[arg(long)]
    pub k: Option<usize>,
    /// Default for any bandwidth not given separately.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub h_pi: Option<f64>,
    #[arg(long)]
    pub h_mu: Option<f64>,
    #[arg(long)]
    pub h_sigma: Option<f64>,
    /// gaussian or boxcar.
    #[arg(long, value_parser = parse_kernel)]
    pub kernel: Option<KernelFamily>,
    /// Kernel support in bandwidths.
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct InitArgs {
    /// constant or bayesian.
    #[arg(long, value_parser = parse_init)]
    pub init: Option<InitMethod>,
    #[arg(long)]
    pub n_times: Option<usize>,
    #[arg(long)]
    pub n_points_per_time: Option<usize>,
    #[arg(long)]
    pub em_max_iters: Option<usize>,
    #[arg(long)]
    pub em_tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Series CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Fit JSON.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Optional per-point responsibility CSV.
    #[arg(long)]
    pub responsibilities: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub init: InitArgs,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// CV result JSON.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Values per axis of the default log grid.
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub grid_min: Option<f64>,
    /// Defaults to the series duration.
    #[arg(long)]
    pub grid_max: Option<f64>,
    /// Explicit h_mu values (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub h_mu_values: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub h_pi_values: Option<Vec<f64>>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub init: InitArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// disappearance or intersection.
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Option<ScenarioKind>,
    /// Labeled series CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Optional truth JSON (mean and proportion functions).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub t_count: Option<usize>,
    #[arg(long)]
    pub n_per_time: Option<usize>,
    #[arg(long)]
    pub duration: Option<usize>,
    #[arg(long)]
    pub overlap_level: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Option<ScenarioKind>,
    /// Disappearance durations to sweep.
    #[arg(long, value_delimiter = ',')]
    pub durations: Option<Vec<usize>>,
    /// Intersection overlap levels to sweep.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Subset of kernel_em, hungarian, constant.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Per-run score CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Summary JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub t_count: Option<usize>,
    #[arg(long)]
    pub n_per_time: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub init: InitArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Fit JSON.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Series CSV, optionally with a `label` column.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Biomass table CSV.
    #[arg(long)]
    pub biomass: Option<PathBuf>,
    /// Confusion matrix CSV (needs labels).
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// Cluster groups to sum, e.g. `1+8,2+3`.
    #[arg(long, value_delimiter = ',', value_parser = parse_subset)]
    pub subsets: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    /// Report JSON.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-time CSV.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub t_count: Option<usize>,
    /// Points per cluster per time.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, value_parser = parse_kernel)]
    pub kernel: Option<KernelFamily>,
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exit nonzero if any verdict fails.
    #[arg(long)]
    pub strict: bool,
}

impl ModelArgs {
    fn apply(&self, c: &mut RunConfig) {
        let flags = RunConfig {
            k: self.k,
            bandwidth: self.bandwidth,
            h_pi: self.h_pi,
            h_mu: self.h_mu,
            h_sigma: self.h_sigma,
            kernel: self.kernel,
            cutoff: self.cutoff,
            max_iters: self.max_iters,
            tol: self.tol,
            ..RunConfig::default()
        };
        c.merge(&flags);
    }
}

impl InitArgs {
    fn apply(&self, c: &mut RunConfig) {
        let flags = RunConfig {
            init: self.init,
            n_times: self.n_times,
            n_points_per_time: self.n_points_per_time,
            em_max_iters: self.em_max_iters,
            em_tol: self.em_tol,
            seed: self.seed,
            ..RunConfig::default()
        };
        c.merge(&flags);
    }
}

impl Command {
    /// Overlay this command's flags on `base`.
    pub fn resolve(&self, mut base: RunConfig) -> RunConfig {
        let c = &mut base;
        match self {
            Command::Fit(a) => {
                c.merge(&RunConfig {
                    input: a.input.clone(),
                    output: a.output.clone(),
                    responsibilities: a.responsibilities.clone(),
                    ..RunConfig::default()
                });
                a.model.apply(c);
                a.init.apply(c);
            }
            Command::Cv(a) => {
                c.merge(&RunConfig {
                    input: a.input.clone(),
                    output: a.output.clone(),
                    folds: a.folds,
                    grid_size: a.grid_size,
                    grid_min: a.grid_min,
                    grid_max: a.grid_max,
                    h_mu_values: a.h_mu_values.clone(),
                    h_pi_values: a.h_pi_values.clone(),
                    ..RunConfig::default()
                });
                a.model.apply(c);
                a.init.apply(c);
            }
            Command::Simulate(a) => c.merge(&RunConfig {
                scenario: a.scenario,
                output: a.output.clone(),
                truth: a.truth.clone(),
                t_count: a.t_count,
                n_per_time: a.n_per_time,
                duration: a.duration,
                overlap_level: a.overlap_level,
                sigma: a.sigma,
                seed: a.seed,
                ..RunConfig::default()
            }),
            Command::Bench(a) => {
                c.merge(&RunConfig {
                    scenario: a.scenario,
                    durations: a.durations.clone(),
                    levels: a.levels.clone(),
                    methods: a.methods.clone(),
                    runs: a.runs,
                    output: a.output.clone(),
                    summary: a.summary.clone(),
                    t_count: a.t_count,
                    n_per_time: a.n_per_time,
                    sigma: a.sigma,
                    ..RunConfig::default()
                });
                a.model.apply(c);
                a.init.apply(c);
            }
            Command::Evaluate(a) => c.merge(&RunConfig {
                fit: a.fit.clone(),
                input: a.input.clone(),
                biomass: a.biomass.clone(),
                confusion: a.confusion.clone(),
                subsets: a.subsets.clone(),
                ..RunConfig::default()
            }),
            Command::TheoryCheck(a) => c.merge(&RunConfig {
                output: a.output.clone(),
                table: a.table.clone(),
                t_count: a.t_count,
                n: a.n,
                sigma: a.sigma,
                bandwidth: a.bandwidth,
                kernel: a.kernel,
                cutoff: a.cutoff,
                reps: a.reps,
                seed: a.seed,
                strict: a.strict.then_some(true),
                ..RunConfig::default()
            }),
        }
        base
    }
}

/// Run a parsed command line, writing human-readable progress to `out`.
pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = cli.command.resolve(base);
    match &cli.command {
        Command::Fit(_) => commands::fit(&cfg, out),
        Command::Cv(_) => commands::cv(&cfg, out),
        Command::Simulate(_) => commands::simulate(&cfg, out),
        Command::Bench(_) => commands::bench(&cfg, out),
        Command::Evaluate(_) => commands::evaluate(&cfg, out),
        Command::TheoryCheck(_) => commands::theory_check(&cfg, out),
    }
}

/// Exit code and one-line JSON error for a failed run.
pub fn describe_error(err: &anyhow::Error) -> (i32, String) {
    let (code, kind) = if err.downcast_ref::<UsageError>().is_some() {
        (2, "usage")
    } else if err.downcast_ref::<VerdictFailed>().is_some() {
        (1, "verdict_failed")
    } else if let Some(e) = err.downcast_ref::<tvmix_core::Error>() {
        (1, e.kind())
    } else {
        (1, "runtime")
    };
    let message = format!("{err:#}");
    let body = serde_json::json!({ "error": { "kind": kind, "message": message } });
    (code, body.to_string())
}
