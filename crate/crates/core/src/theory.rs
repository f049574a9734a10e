//! Monte-Carlo checks of the oracle kernel estimator for two crossing
//! clusters under the linear and absolute-value labelings.
//!
//! At each grid time `s` the data are two branches of `n` points each,
//! branch A with mean `s` and branch B with mean `-s`. The linear labeling
//! calls A cluster 0 everywhere; the absolute-value labeling calls whichever
//! branch has mean `|s|` cluster 0 (A for `s >= 0`, B otherwise).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::KernelSpec;
use crate::sim::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryScenario {
    /// Odd, so the grid contains 0.
    pub t_count: usize,
    /// Points per cluster per time.
    pub n: usize,
    pub sigma: f64,
    pub kernel: KernelSpec,
    pub reps: usize,
    pub seed: u64,
}

impl Default for TheoryScenario {
    fn default() -> Self {
        Self {
            t_count: 41,
            n: 20,
            sigma: 0.5,
            kernel: KernelSpec::gaussian(0.2),
            reps: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    Linear,
    AbsoluteValue,
}

impl Labeling {
    /// True cluster means `(μ₀(t), μ₁(t))`.
    pub fn means(&self, t: f64) -> [f64; 2] {
        match self {
            Labeling::Linear => [t, -t],
            Labeling::AbsoluteValue => [t.abs(), -t.abs()],
        }
    }

    /// Whether branch A carries label 0 at grid time `s`.
    fn a_is_zero(&self, s: f64) -> bool {
        match self {
            Labeling::Linear => true,
            Labeling::AbsoluteValue => s >= 0.0,
        }
    }
}

impl TheoryScenario {
    pub fn validate(&self) -> Result<()> {
        if self.t_count < 3 || self.t_count.is_multiple_of(2) {
            return Err(Error::invalid("t_count must be odd and at least 3"));
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma must be finite and nonnegative"));
        }
        if self.reps < 2 {
            return Err(Error::invalid("reps must be at least 2"));
        }
        Ok(())
    }

    /// Equispaced grid on [-1, 1], exactly symmetric about 0.
    pub fn grid(&self) -> Vec<f64> {
        let c = ((self.t_count - 1) / 2) as f64;
        (0..self.t_count).map(|i| (i as f64 - c) / c).collect()
    }

    /// Kernel window `[t - cutoff·h, t + cutoff·h]` lies inside [-1, 1].
    pub fn is_interior(&self, t: f64) -> bool {
        let r = self.kernel.reach();
        t - r >= -1.0 - 1e-12 && t + r <= 1.0 + 1e-12
    }

    /// Branch means at every grid time for noise-free data.
    pub fn noiseless_data(&self) -> TheoryData {
        let grid = self.grid();
        TheoryData {
            a: grid.clone(),
            b: grid.iter().map(|s| -s).collect(),
            grid,
        }
    }

    /// Draw one replicate, reduced to per-time branch sample means.
    pub fn sample_data(&self, rng: &mut impl Rng) -> TheoryData {
        let grid = self.grid();
        let scale = self.sigma / (self.n as f64);
        let mut branch = |mean: f64| {
            let mut sum = 0.0;
            for _ in 0..self.n {
                let z: f64 = StandardNormal.sample(rng);
                sum += z;
            }
            mean + scale * sum
        };
        let mut a = Vec::with_capacity(grid.len());
        let mut b = Vec::with_capacity(grid.len());
        for &s in &grid {
            a.push(branch(s));
            b.push(branch(-s));
        }
        TheoryData { grid, a, b }
    }
}

/// Per-time branch sample means for one replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoryData {
    pub grid: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl TheoryData {
    /// Cluster-0 and cluster-1 per-time means under `labeling`.
    pub fn cluster_means(&self, labeling: Labeling) -> [Vec<f64>; 2] {
        let mut c0 = Vec::with_capacity(self.grid.len());
        let mut c1 = Vec::with_capacity(self.grid.len());
        for (i, &s) in self.grid.iter().enumerate() {
            if labeling.a_is_zero(s) {
                c0.push(self.a[i]);
                c1.push(self.b[i]);
            } else {
                c0.push(self.b[i]);
                c1.push(self.a[i]);
            }
        }
        [c0, c1]
    }
}

/// Normalized kernel weights `λ_{t,s} = w(t - s) / Σ_u w(t - u)`.
pub fn lambda_weights(grid: &[f64], kernel: &KernelSpec, t: f64) -> Result<Vec<f64>> {
    let w: Vec<f64> = grid.iter().map(|&s| kernel.weight(t - s)).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroKernelMass { time: t });
    }
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Closed-form variance of the oracle estimator:
/// `(σ²/n) Σ_s w(t-s)² / (Σ_u w(t-u))²`.
pub fn variance_formula(grid: &[f64], kernel: &KernelSpec, sigma: f64, n: usize, t: f64) -> Result<f64> {
    let w: Vec<f64> = grid.iter().map(|&s| kernel.weight(t - s)).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroKernelMass { time: t });
    }
    let sq: f64 = w.iter().map(|x| x * x).sum();
    Ok(sigma * sigma * sq / (n as f64 * total * total))
}

/// Kernel-smoothed cluster means from hard labels, 1-d points.
///
/// `values[s]` and `labels[s]` hold the points and labels observed at
/// `times[s]`.
pub fn oracle_estimate(
    times: &[f64],
    values: &[Vec<f64>],
    labels: &[Vec<usize>],
    k: usize,
    kernel: &KernelSpec,
    t: f64,
) -> Result<Vec<f64>> {
    if times.len() != values.len() || times.len() != labels.len() {
        return Err(Error::DimensionMismatch("times, values and labels differ in length".into()));
    }
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for s in 0..times.len() {
        if values[s].len() != labels[s].len() {
            return Err(Error::DimensionMismatch(format!("time index {s}: labels do not match points")));
        }
        let w = kernel.weight(t - times[s]);
        if w == 0.0 {
            continue;
        }
        for (&y, &z) in values[s].iter().zip(&labels[s]) {
            if z >= k {
                return Err(Error::invalid(format!("label {z} out of range for {k} clusters")));
            }
            num[z] += w * y;
            den[z] += w;
        }
    }
    num.iter()
        .zip(&den)
        .enumerate()
        .map(|(j, (n, d))| {
            if *d > 0.0 {
                Ok(n / d)
            } else {
                Err(Error::invalid(format!("cluster {j} has no labeled points in the window of t = {t}")))
            }
        })
        .collect()
}

/// Oracle estimates at every grid time from per-time cluster means (equal
/// counts, so the estimator is a λ-weighted average).
fn smooth_means(lambda: &[Vec<f64>], means: &[f64]) -> Vec<f64> {
    lambda
        .iter()
        .map(|row| row.iter().zip(means).map(|(l, m)| l * m).sum())
        .collect()
}

/// Estimates under both labelings of a noise-free replicate, at `t = 0`:
/// `mse_av(0) = Σ_k (μ̂_k − μ_k)²` computed through the estimator.
pub fn noiseless_mse_av_at_zero(scenario: &TheoryScenario) -> Result<f64> {
    scenario.validate()?;
    let data = scenario.noiseless_data();
    let grid = scenario.grid();
    let mid = grid.len() / 2;
    let lambda = lambda_weights(&grid, &scenario.kernel, grid[mid])?;
    let [c0, c1] = data.cluster_means(Labeling::AbsoluteValue);
    let truth = Labeling::AbsoluteValue.means(grid[mid]);
    let e0: f64 = lambda.iter().zip(&c0).map(|(l, m)| l * m).sum::<f64>() - truth[0];
    let e1: f64 = lambda.iter().zip(&c1).map(|(l, m)| l * m).sum::<f64>() - truth[1];
    Ok(e0 * e0 + e1 * e1)
}

/// `Σ_s λ_{0,s} |s|`, the cluster-0 absolute-value bias at `t = 0`.
pub fn av_bias_at_zero(scenario: &TheoryScenario) -> Result<f64> {
    let grid = scenario.grid();
    let lambda = lambda_weights(&grid, &scenario.kernel, 0.0)?;
    Ok(lambda.iter().zip(&grid).map(|(l, s)| l * s.abs()).sum())
}

/// Per-rep quantities at one grid time.
#[derive(Clone, Copy, Debug, Default)]
struct RepAt {
    /// lin0, lin1, av0, av1 estimates.
    est: [f64; 4],
    mse_lin: f64,
    mse_av: f64,
    epe_lin: f64,
    epe_av: f64,
}

fn one_rep(scenario: &TheoryScenario, lambda: &[Vec<f64>], rep: usize) -> Vec<RepAt> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, rep as u64));
    let data = scenario.sample_data(&mut rng);
    let [l0, l1] = data.cluster_means(Labeling::Linear);
    let [a0, a1] = data.cluster_means(Labeling::AbsoluteValue);
    let est = [
        smooth_means(lambda, &l0),
        smooth_means(lambda, &l1),
        smooth_means(lambda, &a0),
        smooth_means(lambda, &a1),
    ];
    data.grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let e = [est[0][i], est[1][i], est[2][i], est[3][i]];
            let lin = Labeling::Linear.means(t);
            let av = Labeling::AbsoluteValue.means(t);
            let z: f64 = StandardNormal.sample(&mut rng);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let y = sign * t + scenario.sigma * z;
            RepAt {
                est: e,
                mse_lin: (e[0] - lin[0]).powi(2) + (e[1] - lin[1]).powi(2),
                mse_av: (e[2] - av[0]).powi(2) + (e[3] - av[1]).powi(2),
                epe_lin: (y - e[0]).powi(2) + (y - e[1]).powi(2),
                epe_av: (y - e[2]).powi(2) + (y - e[3]).powi(2),
            }
        })
        .collect()
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample variance and its standard error from the fourth central moment.
fn variance_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    let se = ((m4 - m2 * m2).max(0.0) / n).sqrt();
    (var, se)
}

/// Summary for one (labeling, cluster) cell at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub bias: f64,
    pub bias_se: f64,
    /// `E[μ̂] − μ` from the λ weights.
    pub exact_bias: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub t: f64,
    pub interior: bool,
    /// Cells in order lin0, lin1, av0, av1.
    pub cells: [CellStats; 4],
    pub variance_formula: f64,
    pub mse_lin: f64,
    pub mse_av: f64,
    /// Mean and SE of the paired difference `mse_av − mse_lin`.
    pub mse_gap: f64,
    pub mse_gap_se: f64,
    /// `E[mse_av − mse_lin]` from the λ weights (the variances cancel).
    pub exact_mse_gap: f64,
    pub mse_lin_se: f64,
    pub mse_av_se: f64,
    pub epe_lin: f64,
    pub epe_av: f64,
    pub epe_gap: f64,
    pub epe_gap_se: f64,
    pub epe_lin_se: f64,
    pub epe_av_se: f64,
}

/// Aggregated Monte-Carlo results over the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub scenario: TheoryScenario,
    pub rows: Vec<TheoryRow>,
}

pub fn monte_carlo(scenario: &TheoryScenario) -> Result<MonteCarlo> {
    scenario.validate()?;
    let grid = scenario.grid();
    let lambda: Vec<Vec<f64>> = grid
        .iter()
        .map(|&t| lambda_weights(&grid, &scenario.kernel, t))
        .collect::<Result<_>>()?;
    let reps: Vec<Vec<RepAt>> = (0..scenario.reps)
        .into_par_iter()
        .map(|r| one_rep(scenario, &lambda, r))
        .collect();

    let mut rows = Vec::with_capacity(grid.len());
    for (i, &t) in grid.iter().enumerate() {
        let at = || reps.iter().map(move |r| r[i]);
        let truths = {
            let l = Labeling::Linear.means(t);
            let a = Labeling::AbsoluteValue.means(t);
            [l[0], l[1], a[0], a[1]]
        };
        let expected = {
            let lin0: f64 = lambda[i].iter().zip(&grid).map(|(l, s)| l * s).sum();
            let av0: f64 = lambda[i].iter().zip(&grid).map(|(l, s)| l * s.abs()).sum();
            [lin0, -lin0, av0, -av0]
        };
        let cells: Vec<CellStats> = (0..4)
            .map(|c| {
                let errs: Vec<f64> = at().map(|r| r.est[c] - truths[c]).collect();
                let (bias, bias_se) = mean_se(errs.iter().copied());
                let (variance, variance_se) = variance_se(&errs);
                CellStats {
                    bias,
                    bias_se,
                    exact_bias: expected[c] - truths[c],
                    variance,
                    variance_se,
                    mse: errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64,
                }
            })
            .collect();
        let (mse_lin, mse_lin_se) = mean_se(at().map(|r| r.mse_lin));
        let (mse_av, mse_av_se) = mean_se(at().map(|r| r.mse_av));
        let (mse_gap, mse_gap_se) = mean_se(at().map(|r| r.mse_av - r.mse_lin));
        let (epe_lin, epe_lin_se) = mean_se(at().map(|r| r.epe_lin));
        let (epe_av, epe_av_se) = mean_se(at().map(|r| r.epe_av));
        let (epe_gap, epe_gap_se) = mean_se(at().map(|r| r.epe_av - r.epe_lin));
        rows.push(TheoryRow {
            t,
            interior: scenario.is_interior(t),
            cells: [cells[0], cells[1], cells[2], cells[3]],
            variance_formula: variance_formula(&grid, &scenario.kernel, scenario.sigma, scenario.n, t)?,
            mse_lin,
            mse_av,
            mse_gap,
            mse_gap_se,
            exact_mse_gap: (expected[2] - truths[2]).powi(2) + (expected[3] - truths[3]).powi(2)
                - (expected[0] - truths[0]).powi(2)
                - (expected[1] - truths[1]).powi(2),
            mse_lin_se,
            mse_av_se,
            epe_lin,
            epe_av,
            epe_gap,
            epe_gap_se,
            epe_lin_se,
            epe_av_se,
        });
    }
    Ok(MonteCarlo {
        scenario: *scenario,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    /// Linear-labeling bias within 3 SE of zero at every interior time.
    pub linear_unbiased_interior: bool,
    /// Cluster 0 biased upward and cluster 1 downward at `t = 0`.
    pub av_signs_at_zero: bool,
    /// MC bias within 3 SE of the exact λ bias in every cell.
    pub matches_exact: bool,
    pub av_bias_at_zero: f64,
}

pub fn check_bias(mc: &MonteCarlo) -> Result<BiasReport> {
    let within = |c: &CellStats, target: f64| (c.bias - target).abs() <= 3.0 * c.bias_se;
    let linear_unbiased_interior = mc
        .rows
        .iter()
        .filter(|r| r.interior)
        .all(|r| within(&r.cells[0], 0.0) && within(&r.cells[1], 0.0));
    let zero = zero_row(mc)?;
    let exact = av_bias_at_zero(&mc.scenario)?;
    let av_signs_at_zero = zero.cells[2].exact_bias > 0.0
        && zero.cells[3].exact_bias < 0.0
        && (zero.cells[2].exact_bias + zero.cells[3].exact_bias).abs() < 1e-12
        && zero.cells[2].bias > 3.0 * zero.cells[2].bias_se
        && zero.cells[3].bias < -3.0 * zero.cells[3].bias_se;
    let matches_exact = mc
        .rows
        .iter()
        .all(|r| r.cells.iter().all(|c| within(c, c.exact_bias)));
    Ok(BiasReport {
        linear_unbiased_interior,
        av_signs_at_zero,
        matches_exact,
        av_bias_at_zero: exact,
    })
}

fn zero_row(mc: &MonteCarlo) -> Result<&TheoryRow> {
    mc.rows
        .iter()
        .find(|r| r.t == 0.0)
        .ok_or_else(|| Error::invalid("grid does not contain t = 0"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    /// `mse_lin ≤ mse_av + 3·SE` at every t, with SE the standard error of
    /// the difference of the two MC estimates.
    pub mse_inequality: bool,
    pub epe_inequality: bool,
    /// `mse_av(0) − mse_lin(0) > 3·SE`.
    pub strict_gap_at_zero: bool,
    pub noiseless_mse_av_at_zero: f64,
    /// `2 (Σ_s λ_{0,s}|s|)²`.
    pub exact_mse_av_at_zero: f64,
    pub noiseless_matches: bool,
    pub failing_times: Vec<f64>,
    /// Times where the paired difference puts `mse_av` below `mse_lin` by
    /// more than 3 paired SEs. Near the grid edges the linear labeling has
    /// boundary bias that the absolute-value labeling partly cancels.
    pub paired_reversals: Vec<f64>,
    /// Every paired reversal has a negative exact gap.
    pub reversals_explained: bool,
}

pub fn check_ordering(mc: &MonteCarlo) -> Result<OrderingReport> {
    let mut failing = Vec::new();
    let mut mse_ok = true;
    let mut epe_ok = true;
    let mut reversals = Vec::new();
    let mut explained = true;
    for r in &mc.rows {
        let m = r.mse_lin <= r.mse_av + 3.0 * r.mse_lin_se.hypot(r.mse_av_se);
        let e = r.epe_lin <= r.epe_av + 3.0 * r.epe_lin_se.hypot(r.epe_av_se);
        if r.mse_gap < -3.0 * r.mse_gap_se {
            reversals.push(r.t);
            explained &= r.exact_mse_gap < 0.0;
        }
        mse_ok &= m;
        epe_ok &= e;
        if !(m && e) {
            failing.push(r.t);
        }
    }
    let zero = zero_row(mc)?;
    let noiseless = noiseless_mse_av_at_zero(&mc.scenario)?;
    let b = av_bias_at_zero(&mc.scenario)?;
    let exact = 2.0 * b * b;
    Ok(OrderingReport {
        mse_inequality: mse_ok,
        epe_inequality: epe_ok,
        strict_gap_at_zero: zero.mse_av - zero.mse_lin > 3.0 * zero.mse_lin_se.hypot(zero.mse_av_se),
        noiseless_mse_av_at_zero: noiseless,
        exact_mse_av_at_zero: exact,
        noiseless_matches: (noiseless - exact).abs() <= 1e-12,
        failing_times: failing,
        paired_reversals: reversals,
        reversals_explained: explained,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// Closed form within 4 SE of the MC variance in all four cells, at the
    /// checked times.
    pub agrees: bool,
    pub checked_times: Vec<f64>,
    /// Same check over every grid time.
    pub agrees_everywhere: bool,
}

/// Compare MC variances with the closed form at `times` (grid values).
pub fn check_variance_formula(mc: &MonteCarlo, times: &[f64]) -> VarianceReport {
    let ok = |r: &TheoryRow| {
        r.cells
            .iter()
            .all(|c| (c.variance - r.variance_formula).abs() <= 4.0 * c.variance_se)
    };
    let agrees = times.iter().all(|&t| {
        mc.rows
            .iter()
            .find(|r| (r.t - t).abs() < 1e-12)
            .is_some_and(ok)
    });
    VarianceReport {
        agrees,
        checked_times: times.to_vec(),
        agrees_everywhere: mc.rows.iter().all(ok),
    }
}

/// Everything the `theory-check` command reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub scenario: TheoryScenario,
    pub bias: BiasReport,
    pub ordering: OrderingReport,
    pub variance: VarianceReport,
    pub rows: Vec<TheoryRow>,
}

impl TheoryReport {
    pub fn all_pass(&self) -> bool {
        self.bias.linear_unbiased_interior
            && self.bias.av_signs_at_zero
            && self.ordering.mse_inequality
            && self.ordering.epe_inequality
            && self.ordering.strict_gap_at_zero
            && self.ordering.noiseless_matches
            && self.variance.agrees
    }
}

pub fn run_theory_check(scenario: &TheoryScenario) -> Result<TheoryReport> {
    let mc = monte_carlo(scenario)?;
    let bias = check_bias(&mc)?;
    let ordering = check_ordering(&mc)?;
    let variance = check_variance_formula(&mc, &[-1.0, 0.0, 1.0]);
    Ok(TheoryReport {
        scenario: *scenario,
        bias,
        ordering,
        variance,
        rows: mc.rows,
    })
}
