//! Synthetic scenarios with known labels, the Rand index, and a harness
//! scoring kernel EM against the two baselines.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{constant_fit, hungarian_fit};
use crate::error::{Error, Result};
use crate::init::{initialize, EmOptions, InitConfig, InitMethod};
use crate::kem::{fit, FitConfig, FitResult, Smoother};
use crate::model::{weighted_loglik, Bandwidths, CytoSeries, Cytogram, Responsibilities};

/// SplitMix64 finalizer applied to `base` mixed with a stream index.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One cluster vanishes for a centered window of `duration` time points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisappearanceParams {
    pub t_count: usize,
    pub n_per_time: usize,
    pub duration: usize,
    pub sigma: f64,
    /// Constant mean of cluster 1.
    pub base_mean: f64,
    /// Cluster 2 mean is `offset + amplitude * sin(2π t / T)`.
    pub offset: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for DisappearanceParams {
    fn default() -> Self {
        Self {
            t_count: 100,
            n_per_time: 100,
            duration: 20,
            sigma: 0.5,
            base_mean: 0.0,
            offset: 4.0,
            amplitude: 1.0,
            seed: 0,
        }
    }
}

impl DisappearanceParams {
    /// Half-open index range `[start, end)` during which cluster 2 is absent.
    pub fn window(&self) -> (usize, usize) {
        let start = (self.t_count - self.duration) / 2;
        (start, start + self.duration)
    }

    pub fn cluster2_mean(&self, t: usize) -> f64 {
        let phase = 2.0 * std::f64::consts::PI * t as f64 / self.t_count as f64;
        self.offset + self.amplitude * phase.sin()
    }
}

/// Two mean trajectories whose gap narrows mid-series, optionally on a common
/// linear drift.
///
/// With `u = t / (T - 1)` the means are `c(u) ± s(u) / 2`, where
/// `c(u) = drift (u - 1/2)` and the signed gap is
/// `s(u) = s_min + (s_max - s_min)(2u - 1)²` with
/// `s_min = (6 - 4·level) σ`. Level 0 keeps the clusters at least 6σ apart,
/// level 1 narrows to 2σ and levels above 1.5 make them cross.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionParams {
    pub t_count: usize,
    pub n_per_time: usize,
    pub overlap_level: f64,
    pub sigma: f64,
    /// Gap at the ends of the series, in units of σ.
    pub max_separation: f64,
    pub drift: f64,
    pub seed: u64,
}

impl Default for IntersectionParams {
    fn default() -> Self {
        Self {
            t_count: 100,
            n_per_time: 100,
            overlap_level: 0.0,
            sigma: 0.5,
            max_separation: 12.0,
            drift: 0.0,
            seed: 0,
        }
    }
}

impl IntersectionParams {
    pub fn min_separation(&self) -> f64 {
        (6.0 - 4.0 * self.overlap_level) * self.sigma
    }

    /// Signed gap between the two means at time index `t`.
    pub fn separation(&self, t: usize) -> f64 {
        let u = if self.t_count > 1 {
            t as f64 / (self.t_count - 1) as f64
        } else {
            0.5
        };
        let lo = self.min_separation();
        let hi = self.max_separation * self.sigma;
        lo + (hi - lo) * (2.0 * u - 1.0).powi(2)
    }

    pub fn means(&self, t: usize) -> [f64; 2] {
        let u = if self.t_count > 1 {
            t as f64 / (self.t_count - 1) as f64
        } else {
            0.5
        };
        let c = self.drift * (u - 0.5);
        let s = self.separation(t);
        [c + s / 2.0, c - s / 2.0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum Scenario {
    Disappearance(DisappearanceParams),
    Intersection(IntersectionParams),
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Disappearance(_) => "disappearance",
            Scenario::Intersection(_) => "intersection",
        }
    }

    /// Duration or overlap level.
    pub fn param(&self) -> f64 {
        match self {
            Scenario::Disappearance(p) => p.duration as f64,
            Scenario::Intersection(p) => p.overlap_level,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            Scenario::Disappearance(p) => Scenario::Disappearance(DisappearanceParams { seed, ..p }),
            Scenario::Intersection(p) => Scenario::Intersection(IntersectionParams { seed, ..p }),
        }
    }

    pub fn generate(&self) -> Result<SimTruth> {
        match self {
            Scenario::Disappearance(p) => gen_disappearance(p),
            Scenario::Intersection(p) => gen_intersection(p),
        }
    }
}

/// Simulated series plus its generating truth. Labels are 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTruth {
    pub series: CytoSeries,
    pub labels: Vec<Vec<usize>>,
    /// `T x K` true means (1-d).
    pub mean_fns: Vec<Vec<f64>>,
    /// `T x K` true mixing proportions.
    pub pi_fns: Vec<Vec<f64>>,
    pub scenario: Scenario,
}

fn draw_series(
    t_count: usize,
    n: usize,
    sigma: f64,
    seed: u64,
    means: &[Vec<f64>],
    pis: &[Vec<f64>],
) -> Result<(CytoSeries, Vec<Vec<usize>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut cytos = Vec::with_capacity(t_count);
    let mut labels = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let mut ys = Vec::with_capacity(n);
        let mut zs = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut z = 0;
            let mut acc = pis[t][0];
            while u >= acc && z + 1 < pis[t].len() {
                z += 1;
                acc += pis[t][z];
            }
            ys.push(means[t][z] + noise.sample(&mut rng));
            zs.push(z);
        }
        cytos.push(Cytogram::unweighted(t as f64, 1, ys)?);
        labels.push(zs);
    }
    Ok((CytoSeries::new(cytos)?, labels))
}

pub fn gen_disappearance(p: &DisappearanceParams) -> Result<SimTruth> {
    if p.duration >= p.t_count {
        return Err(Error::invalid(format!(
            "duration {} must be shorter than the series ({})",
            p.duration, p.t_count
        )));
    }
    if p.n_per_time == 0 || !(p.sigma > 0.0) {
        return Err(Error::invalid("n_per_time and sigma must be positive"));
    }
    let (start, end) = p.window();
    let mean_fns: Vec<Vec<f64>> = (0..p.t_count)
        .map(|t| vec![p.base_mean, p.cluster2_mean(t)])
        .collect();
    let pi_fns: Vec<Vec<f64>> = (0..p.t_count)
        .map(|t| {
            if (start..end).contains(&t) {
                vec![1.0, 0.0]
            } else {
                vec![0.5, 0.5]
            }
        })
        .collect();
    let (series, labels) = draw_series(p.t_count, p.n_per_time, p.sigma, p.seed, &mean_fns, &pi_fns)?;
    Ok(SimTruth {
        series,
        labels,
        mean_fns,
        pi_fns,
        scenario: Scenario::Disappearance(*p),
    })
}

pub fn gen_intersection(p: &IntersectionParams) -> Result<SimTruth> {
    if !(p.overlap_level >= 0.0) {
        return Err(Error::invalid("overlap_level must be nonnegative"));
    }
    if p.n_per_time == 0 || p.t_count == 0 || !(p.sigma > 0.0) {
        return Err(Error::invalid("t_count, n_per_time and sigma must be positive"));
    }
    let mean_fns: Vec<Vec<f64>> = (0..p.t_count).map(|t| p.means(t).to_vec()).collect();
    let pi_fns = vec![vec![0.5, 0.5]; p.t_count];
    let (series, labels) = draw_series(p.t_count, p.n_per_time, p.sigma, p.seed, &mean_fns, &pi_fns)?;
    Ok(SimTruth {
        series,
        labels,
        mean_fns,
        pi_fns,
        scenario: Scenario::Intersection(*p),
    })
}

/// Draw every point's label from its responsibility row.
pub fn sample_labels(resp: &Responsibilities, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = resp.k();
    (0..resp.len())
        .map(|t| {
            resp.gamma(t)
                .chunks_exact(k)
                .map(|row| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    for (j, g) in row.iter().enumerate() {
                        acc += g;
                        if u < acc {
                            return j;
                        }
                    }
                    // Rounding left u above the cumulative sum.
                    row.iter().rposition(|g| *g > 0.0).unwrap_or(k - 1)
                })
                .collect()
        })
        .collect()
}

/// Hard labels by largest responsibility (diagnostics only).
pub fn argmax_labels(resp: &Responsibilities) -> Vec<Vec<usize>> {
    let k = resp.k();
    (0..resp.len())
        .map(|t| {
            resp.gamma(t)
                .chunks_exact(k)
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map_or(0, |(j, _)| j)
                })
                .collect()
        })
        .collect()
}

fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Fraction of unordered point pairs on which two labelings agree, from the
/// contingency table.
pub fn rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "labelings of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::invalid("the Rand index needs at least two points"));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let both: u64 = table.values().map(|&c| choose2(c)).sum();
    let same_a: u64 = rows.values().map(|&c| choose2(c)).sum();
    let same_b: u64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(a.len() as u64);
    let agree = total + 2 * both - same_a - same_b;
    Ok(agree as f64 / total as f64)
}

/// Rand index at each time, averaged over times with at least two points.
pub fn mean_rand_index(truth: &[Vec<usize>], labels: &[Vec<usize>]) -> Result<f64> {
    if truth.len() != labels.len() {
        return Err(Error::DimensionMismatch("label series lengths differ".into()));
    }
    let mut sum = 0.0;
    let mut count = 0;
    for (a, b) in truth.iter().zip(labels) {
        if a.len() < 2 {
            continue;
        }
        sum += rand_index(a, b)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("no time point has two or more points"));
    }
    Ok(sum / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KernelEm,
    Hungarian,
    Constant,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::KernelEm, Method::Hungarian, Method::Constant];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::KernelEm => "kernel_em",
            Method::Hungarian => "hungarian",
            Method::Constant => "constant",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernel_em" | "kernel-em" | "kem" => Ok(Method::KernelEm),
            "hungarian" => Ok(Method::Hungarian),
            "constant" => Ok(Method::Constant),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub runs: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub k: usize,
    pub smoother: Smoother,
    pub max_iters: usize,
    pub tol: f64,
    /// Kernel EM is run from each of these starts and the fit with the
    /// highest weighted log-likelihood is kept.
    pub inits: Vec<InitMethod>,
    /// Subsampling settings for the constant start; its `method` is ignored.
    pub init: InitConfig,
    pub em: EmOptions,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            runs: 50,
            seed: 0,
            methods: Method::ALL.to_vec(),
            k: 2,
            smoother: Smoother::gaussian(Bandwidths::uniform(5.0)),
            max_iters: 100,
            tol: 1e-6,
            inits: vec![InitMethod::Constant, InitMethod::Bayesian],
            init: InitConfig::default(),
            em: EmOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub method: Method,
    pub scenario_param: f64,
    pub run: usize,
    pub rand_index: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub method: Method,
    pub run: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean: f64,
    /// Sample standard deviation over runs divided by √runs.
    pub se: f64,
    pub runs_ok: usize,
    pub runs_failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub scenario: String,
    pub scenario_param: f64,
    pub summaries: Vec<MethodSummary>,
    pub scores: Vec<RunScore>,
    pub failures: Vec<RunFailure>,
}

impl BenchResult {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

/// Fit one method to a simulated series.
pub fn fit_method(
    method: Method,
    series: &CytoSeries,
    config: &BenchConfig,
    seed: u64,
) -> Result<FitResult> {
    let em = EmOptions { seed, ..config.em };
    match method {
        Method::KernelEm => {
            if config.inits.is_empty() {
                return Err(Error::invalid("no kernel-EM initialization selected"));
            }
            let fit_config = FitConfig {
                k: config.k,
                smoother: config.smoother,
                max_iters: config.max_iters,
                tol: config.tol,
                seed,
            };
            let mut best: Option<(f64, FitResult)> = None;
            let mut first_err = None;
            for &method in &config.inits {
                let init_config = InitConfig {
                    method,
                    em,
                    ..config.init
                };
                let outcome = initialize(series, config.k, &init_config)
                    .and_then(|(init, _)| fit(series, &init, &fit_config))
                    .and_then(|f| Ok((weighted_loglik(series, &f.params)?, f)));
                match outcome {
                    Ok((ll, f)) => {
                        if best.as_ref().is_none_or(|(b, _)| ll > *b) {
                            best = Some((ll, f));
                        }
                    }
                    Err(e) => {
                        first_err.get_or_insert(e);
                    }
                }
            }
            match (best, first_err) {
                (Some((_, f)), _) => Ok(f),
                (None, Some(e)) => Err(e),
                (None, None) => unreachable!("at least one start was tried"),
            }
        }
        Method::Hungarian => hungarian_fit(series, config.k, &em),
        Method::Constant => constant_fit(series, config.k, &em),
    }
}

fn summarize(method: Method, values: &[f64], failed: usize) -> MethodSummary {
    let n = values.len();
    let mean = if n > 0 {
        values.iter().sum::<f64>() / n as f64
    } else {
        f64::NAN
    };
    let se = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        f64::NAN
    };
    MethodSummary {
        method,
        mean,
        se,
        runs_ok: n,
        runs_failed: failed,
    }
}

/// Generate `config.runs` independent series, fit every method to each and
/// score sampled labels against the truth.
pub fn run_benchmark(scenario: &Scenario, config: &BenchConfig) -> Result<BenchResult> {
    if config.runs == 0 {
        return Err(Error::invalid("runs must be at least 1"));
    }
    if config.methods.is_empty() {
        return Err(Error::invalid("no methods selected"));
    }
    let param = scenario.param();
    let per_run: Vec<Result<Vec<std::result::Result<f64, String>>>> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let run_seed = derive_seed(config.seed, run as u64);
            let truth = scenario.with_seed(run_seed).generate()?;
            Ok(config
                .methods
                .iter()
                .enumerate()
                .map(|(m, &method)| {
                    let fit_seed = derive_seed(run_seed, 1 + m as u64);
                    fit_method(method, &truth.series, config, fit_seed)
                        .and_then(|f| {
                            let labels = sample_labels(&f.resp, derive_seed(fit_seed, 99));
                            mean_rand_index(&truth.labels, &labels)
                        })
                        .map_err(|e| e.to_string())
                })
                .collect())
        })
        .collect();

    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for (run, outcome) in per_run.into_iter().enumerate() {
        for (&method, r) in config.methods.iter().zip(outcome?) {
            match r {
                Ok(rand_index) => scores.push(RunScore {
                    method,
                    scenario_param: param,
                    run,
                    rand_index,
                }),
                Err(error) => failures.push(RunFailure { method, run, error }),
            }
        }
    }
    let summaries = config
        .methods
        .iter()
        .map(|&m| {
            let vals: Vec<f64> = scores
                .iter()
                .filter(|s| s.method == m)
                .map(|s| s.rand_index)
                .collect();
            let failed = failures.iter().filter(|f| f.method == m).count();
            summarize(m, &vals, failed)
        })
        .collect();
    Ok(BenchResult {
        scenario: scenario.name().to_string(),
        scenario_param: param,
        summaries,
        scores,
        failures,
    })
}
