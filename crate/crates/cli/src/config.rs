//! Settings shared by every subcommand. A JSON file supplies defaults and
//! command-line flags override it field by field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tvmix_core::{
    Bandwidths, BenchConfig, DisappearanceParams, EmOptions, FitConfig, InitConfig, InitMethod,
    IntersectionParams, KernelFamily, KernelSpec, Method, Scenario, Smoother, TheoryScenario,
};

use crate::UsageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Disappearance,
    Intersection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub fit: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub responsibilities: Option<PathBuf>,
    pub biomass: Option<PathBuf>,
    pub confusion: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub table: Option<PathBuf>,

    pub k: Option<usize>,
    /// Sets any of the three bandwidths not given individually.
    pub bandwidth: Option<f64>,
    pub h_pi: Option<f64>,
    pub h_mu: Option<f64>,
    pub h_sigma: Option<f64>,
    pub kernel: Option<KernelFamily>,
    pub cutoff: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,

    pub init: Option<InitMethod>,
    pub n_times: Option<usize>,
    pub n_points_per_time: Option<usize>,
    pub em_max_iters: Option<usize>,
    pub em_tol: Option<f64>,
    pub seed: Option<u64>,

    pub folds: Option<usize>,
    pub grid_size: Option<usize>,
    pub grid_min: Option<f64>,
    pub grid_max: Option<f64>,
    pub h_mu_values: Option<Vec<f64>>,
    pub h_pi_values: Option<Vec<f64>>,

    pub scenario: Option<ScenarioKind>,
    pub t_count: Option<usize>,
    pub n_per_time: Option<usize>,
    pub duration: Option<usize>,
    pub overlap_level: Option<f64>,
    pub sigma: Option<f64>,
    pub durations: Option<Vec<usize>>,
    pub levels: Option<Vec<f64>>,
    pub methods: Option<Vec<Method>>,
    pub runs: Option<usize>,

    /// 1-based cluster groups summed into extra biomass columns.
    pub subsets: Option<Vec<Vec<usize>>>,

    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub strict: Option<bool>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($field:ident),* $(,)?) => {
        $(if $src.$field.is_some() {
            $dst.$field = $src.$field.clone();
        })*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
    }

    /// Fields set in `other` replace those in `self`.
    pub fn merge(&mut self, other: &RunConfig) {
        overlay!(
            self, other, input, output, fit, truth, responsibilities, biomass, confusion, summary, table, k,
            bandwidth, h_pi, h_mu, h_sigma, kernel, cutoff, max_iters, tol, init, n_times, n_points_per_time,
            em_max_iters, em_tol, seed, folds, grid_size, grid_min, grid_max, h_mu_values, h_pi_values,
            scenario, t_count, n_per_time, duration, overlap_level, sigma, durations, levels, methods, runs,
            subsets, n, reps, strict,
        );
    }

    pub fn require_path(&self, value: &Option<PathBuf>, flag: &str) -> Result<PathBuf, UsageError> {
        value
            .clone()
            .ok_or_else(|| UsageError(format!("missing required --{flag}")))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn bandwidths(&self) -> Result<Bandwidths, UsageError> {
        let pick = |v: Option<f64>, name: &str| {
            v.or(self.bandwidth)
                .ok_or_else(|| UsageError(format!("missing --{name} (or --bandwidth)")))
        };
        Ok(Bandwidths {
            h_pi: pick(self.h_pi, "h-pi")?,
            h_mu: pick(self.h_mu, "h-mu")?,
            h_sigma: pick(self.h_sigma, "h-sigma")?,
        })
    }

    pub fn smoother(&self, bandwidths: Bandwidths) -> Smoother {
        Smoother {
            family: self.kernel.unwrap_or_default(),
            cutoff: self.cutoff.unwrap_or(KernelSpec::DEFAULT_CUTOFF),
            bandwidths,
        }
    }

    pub fn em_options(&self) -> EmOptions {
        let d = EmOptions::default();
        EmOptions {
            max_iters: self.em_max_iters.unwrap_or(d.max_iters),
            tol: self.em_tol.unwrap_or(d.tol),
            seed: self.seed(),
        }
    }

    pub fn init_config(&self) -> InitConfig {
        let d = InitConfig::default();
        InitConfig {
            method: self.init.unwrap_or(d.method),
            n_times: self.n_times.unwrap_or(d.n_times),
            n_points_per_time: self.n_points_per_time.unwrap_or(d.n_points_per_time),
            em: self.em_options(),
        }
    }

    pub fn k(&self) -> Result<usize, UsageError> {
        self.k.ok_or_else(|| UsageError("missing required --k".into()))
    }

    /// Fit settings with a placeholder bandwidth when none is needed yet.
    pub fn fit_config_with(&self, bandwidths: Bandwidths) -> Result<FitConfig, UsageError> {
        let mut c = FitConfig::new(self.k()?, bandwidths);
        c.smoother = self.smoother(bandwidths);
        c.max_iters = self.max_iters.unwrap_or(c.max_iters);
        c.tol = self.tol.unwrap_or(c.tol);
        c.seed = self.seed();
        Ok(c)
    }

    pub fn fit_config(&self) -> Result<FitConfig, UsageError> {
        self.fit_config_with(self.bandwidths()?)
    }

    /// Scenario for `simulate`, with `param` overriding the duration or
    /// overlap level.
    pub fn scenario(&self, param: Option<f64>) -> Result<Scenario, UsageError> {
        let kind = self
            .scenario
            .ok_or_else(|| UsageError("missing required --scenario".into()))?;
        Ok(match kind {
            ScenarioKind::Disappearance => {
                let d = DisappearanceParams::default();
                Scenario::Disappearance(DisappearanceParams {
                    t_count: self.t_count.unwrap_or(d.t_count),
                    n_per_time: self.n_per_time.unwrap_or(d.n_per_time),
                    duration: param.map(|p| p as usize).or(self.duration).unwrap_or(d.duration),
                    sigma: self.sigma.unwrap_or(d.sigma),
                    seed: self.seed(),
                    ..d
                })
            }
            ScenarioKind::Intersection => {
                let d = IntersectionParams::default();
                Scenario::Intersection(IntersectionParams {
                    t_count: self.t_count.unwrap_or(d.t_count),
                    n_per_time: self.n_per_time.unwrap_or(d.n_per_time),
                    overlap_level: param.or(self.overlap_level).unwrap_or(d.overlap_level),
                    sigma: self.sigma.unwrap_or(d.sigma),
                    seed: self.seed(),
                    ..d
                })
            }
        })
    }

    /// Scenario parameters to sweep in `bench`.
    pub fn sweep(&self) -> Result<Vec<f64>, UsageError> {
        match self.scenario {
            Some(ScenarioKind::Disappearance) => Ok(self
                .durations
                .clone()
                .unwrap_or_else(|| vec![5, 20, 60])
                .into_iter()
                .map(|d| d as f64)
                .collect()),
            Some(ScenarioKind::Intersection) => Ok(self.levels.clone().unwrap_or_else(|| vec![0.0, 1.0, 2.0])),
            None => Err(UsageError("missing required --scenario".into())),
        }
    }

    pub fn bench_config(&self) -> BenchConfig {
        let d = BenchConfig::default();
        let h = self.bandwidth.unwrap_or(d.smoother.bandwidths.h_mu);
        let bw = Bandwidths {
            h_pi: self.h_pi.unwrap_or(h),
            h_mu: self.h_mu.unwrap_or(h),
            h_sigma: self.h_sigma.unwrap_or(h),
        };
        BenchConfig {
            runs: self.runs.unwrap_or(d.runs),
            seed: self.seed(),
            methods: self.methods.clone().unwrap_or(d.methods),
            k: self.k.unwrap_or(d.k),
            smoother: self.smoother(bw),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            tol: self.tol.unwrap_or(d.tol),
            inits: match self.init {
                Some(m) => vec![m],
                None => d.inits,
            },
            init: self.init_config(),
            em: self.em_options(),
        }
    }

    pub fn theory_scenario(&self) -> Result<TheoryScenario, UsageError> {
        let d = TheoryScenario::default();
        let kernel = KernelSpec::new(
            self.kernel.unwrap_or(d.kernel.family),
            self.bandwidth.unwrap_or(d.kernel.bandwidth),
            self.cutoff.unwrap_or(d.kernel.cutoff),
        )
        .map_err(|e| UsageError(e.to_string()))?;
        Ok(TheoryScenario {
            t_count: self.t_count.unwrap_or(d.t_count),
            n: self.n.unwrap_or(d.n),
            sigma: self.sigma.unwrap_or(d.sigma),
            kernel,
            reps: self.reps.unwrap_or(d.reps),
            seed: self.seed(),
        })
    }
}
