//! Starting values for kernel EM: a classical weighted EM on one cytogram,
//! the time-constant subsample scheme and the sequential conjugate
//! posterior-mean scheme.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    component_log_terms, log_sum_exp, regularize_covariance, weighted_moments, CytoSeries,
    Cytogram, FitEvent, MixtureState, ParamsSeries,
};

/// Mass below this fraction of the total marks an empty component.
const EMPTY_FRACTION: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    #[default]
    Constant,
    Bayesian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub method: InitMethod,
    /// Time points subsampled by the constant scheme.
    pub n_times: usize,
    /// Bins drawn per subsampled time.
    pub n_points_per_time: usize,
    pub em: EmOptions,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            method: InitMethod::Constant,
            n_times: 50,
            n_points_per_time: 50,
            em: EmOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmFit {
    pub state: MixtureState,
    /// Log-likelihood before each M-step, then of the returned state.
    pub loglik_trace: Vec<f64>,
    pub events: Vec<FitEvent>,
    pub iterations: usize,
}

fn positive_count(cyto: &Cytogram) -> usize {
    cyto.weights().iter().filter(|w| **w > 0.0).count()
}

/// Draw an index with probability proportional to `weights`.
fn draw_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last = Some(i);
            if u < *w {
                return Some(i);
            }
            u -= w;
        }
    }
    last
}

fn sq_dist(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Weighted k-means++ centers: first with probability ∝ C, the rest ∝ C·D².
pub fn kmeans_pp_centers(cyto: &Cytogram, k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let first = draw_weighted(cyto.weights(), rng).expect("cytogram has positive weight");
    let mut centers = vec![DVector::from_column_slice(cyto.point(first))];
    let mut d2: Vec<f64> = cyto.points().map(|y| sq_dist(y, &centers[0])).collect();
    while centers.len() < k {
        let scores: Vec<f64> = d2.iter().zip(cyto.weights()).map(|(d, w)| d * w).collect();
        let next = draw_weighted(&scores, rng)
            .or_else(|| draw_weighted(cyto.weights(), rng))
            .expect("cytogram has positive weight");
        let c = DVector::from_column_slice(cyto.point(next));
        for (d, y) in d2.iter_mut().zip(cyto.points()) {
            *d = d.min(sq_dist(y, &c));
        }
        centers.push(c);
    }
    centers
}

fn seeded_state(cyto: &Cytogram, k: usize, rng: &mut ChaCha8Rng) -> MixtureState {
    let (_, mut cov) = weighted_moments(cyto);
    regularize_covariance(&mut cov);
    MixtureState {
        pi: vec![1.0 / k as f64; k],
        mu: kmeans_pp_centers(cyto, k, rng),
        sigma: vec![cov; k],
    }
}

/// Classical E-step on one cytogram: gamma rows (`n x K`) and the loglik.
pub fn em_responsibilities(cyto: &Cytogram, state: &MixtureState) -> Result<(Vec<f64>, f64)> {
    let k = state.k();
    let comps = state.components()?;
    let log_pi: Vec<f64> = state.pi.iter().map(|p| p.ln()).collect();
    let mut gamma = vec![0.0; cyto.len() * k];
    let mut terms = vec![0.0; k];
    let mut ll = 0.0;
    for (i, y) in cyto.points().enumerate() {
        component_log_terms(&log_pi, &comps, y, &mut terms);
        let lse = log_sum_exp(&terms);
        let row = &mut gamma[i * k..(i + 1) * k];
        if lse.is_finite() {
            for (g, t) in row.iter_mut().zip(&terms) {
                *g = (t - lse).exp();
            }
            if cyto.weight(i) > 0.0 {
                ll += cyto.weight(i) * lse;
            }
        } else {
            row.fill(1.0 / k as f64);
        }
    }
    Ok((gamma, ll))
}

/// Per-component weighted masses, means and scatter about those means.
struct ComponentStats {
    mass: Vec<f64>,
    mean: Vec<DVector<f64>>,
    scatter: Vec<DMatrix<f64>>,
}

fn component_stats(cyto: &Cytogram, gamma: &[f64], k: usize) -> ComponentStats {
    let d = cyto.dim();
    let mut mass = vec![0.0; k];
    let mut sum = vec![DVector::zeros(d); k];
    for (i, y) in cyto.points().enumerate() {
        let w = cyto.weight(i);
        for kk in 0..k {
            let wg = w * gamma[i * k + kk];
            mass[kk] += wg;
            for j in 0..d {
                sum[kk][j] += wg * y[j];
            }
        }
    }
    let mean: Vec<DVector<f64>> = sum
        .into_iter()
        .zip(&mass)
        .map(|(s, m)| if *m > 0.0 { s / *m } else { s })
        .collect();
    let mut scatter = vec![DMatrix::zeros(d, d); k];
    for (i, y) in cyto.points().enumerate() {
        let w = cyto.weight(i);
        for kk in 0..k {
            let wg = w * gamma[i * k + kk];
            for p in 0..d {
                let rp = y[p] - mean[kk][p];
                for q in 0..d {
                    scatter[kk][(p, q)] += wg * rp * (y[q] - mean[kk][q]);
                }
            }
        }
    }
    ComponentStats {
        mass,
        mean,
        scatter,
    }
}

/// One classical M-step from given responsibilities. Components with no
/// mass are returned as `None`.
fn classical_m_step(
    cyto: &Cytogram,
    gamma: &[f64],
    k: usize,
    events: &mut Vec<FitEvent>,
) -> Vec<Option<(f64, DVector<f64>, DMatrix<f64>)>> {
    let total = cyto.total_weight();
    let stats = component_stats(cyto, gamma, k);
    (0..k)
        .map(|kk| {
            let m = stats.mass[kk];
            if m < EMPTY_FRACTION * total {
                return None;
            }
            let mut cov = &stats.scatter[kk] / m;
            if let Some(epsilon) = regularize_covariance(&mut cov) {
                events.push(FitEvent::Ridge {
                    time_index: 0,
                    cluster: kk,
                    epsilon,
                });
            }
            Some((m / total, stats.mean[kk].clone(), cov))
        })
        .collect()
}

/// One full classical EM iteration; empty components are an error here.
pub fn em_step(cyto: &Cytogram, state: &MixtureState) -> Result<(MixtureState, f64)> {
    let (gamma, ll) = em_responsibilities(cyto, state)?;
    let mut events = Vec::new();
    let comps = classical_m_step(cyto, &gamma, state.k(), &mut events);
    let mut pi = Vec::new();
    let mut mu = Vec::new();
    let mut sigma = Vec::new();
    for (kk, c) in comps.into_iter().enumerate() {
        let (p, m, s) = c.ok_or_else(|| Error::invalid(format!("component {kk} lost all mass")))?;
        pi.push(p);
        mu.push(m);
        sigma.push(s);
    }
    Ok((MixtureState { pi, mu, sigma }, ll))
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    let scale = cur.abs();
    if scale > 0.0 {
        (cur - prev).abs() / scale
    } else {
        (cur - prev).abs()
    }
}

/// Classical weighted EM from k-means++ centers.
pub fn standard_em(cyto: &Cytogram, k: usize, options: &EmOptions) -> Result<EmFit> {
    check_em_input(cyto, k, options)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let start = seeded_state(cyto, k, &mut rng);
    run_em(cyto, start, options, &mut rng)
}

/// Classical weighted EM started from `start`.
pub fn standard_em_from(cyto: &Cytogram, start: &MixtureState, options: &EmOptions) -> Result<EmFit> {
    check_em_input(cyto, start.k(), options)?;
    if start.dim() != cyto.dim() {
        return Err(Error::DimensionMismatch("start state dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    run_em(cyto, start.clone(), options, &mut rng)
}

fn check_em_input(cyto: &Cytogram, k: usize, options: &EmOptions) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if options.max_iters == 0 {
        return Err(Error::invalid("max_iters must be at least 1"));
    }
    let n = positive_count(cyto);
    if n <= k {
        return Err(Error::invalid(format!(
            "{n} positively weighted points cannot support {k} components"
        )));
    }
    Ok(())
}

fn run_em(
    cyto: &Cytogram,
    mut state: MixtureState,
    options: &EmOptions,
    rng: &mut ChaCha8Rng,
) -> Result<EmFit> {
    let k = state.k();
    let mut trace = Vec::new();
    let mut events = Vec::new();
    let mut iterations = 0;
    for iter in 0..options.max_iters {
        let (gamma, ll) = em_responsibilities(cyto, &state)?;
        if let Some(&prev) = trace.last() {
            if relative_change(prev, ll) < options.tol {
                trace.push(ll);
                return Ok(EmFit {
                    state,
                    loglik_trace: trace,
                    events,
                    iterations,
                });
            }
        }
        trace.push(ll);
        let comps = classical_m_step(cyto, &gamma, k, &mut events);
        let mut next = state.clone();
        let mut reseeded = Vec::new();
        for (kk, c) in comps.into_iter().enumerate() {
            match c {
                Some((p, m, s)) => {
                    next.pi[kk] = p;
                    next.mu[kk] = m;
                    next.sigma[kk] = s;
                }
                None => reseeded.push(kk),
            }
        }
        if !reseeded.is_empty() {
            reseed(cyto, &mut next, &reseeded, rng);
            for kk in reseeded {
                events.push(FitEvent::EmptyCluster {
                    iteration: iter,
                    cluster: kk,
                });
            }
        }
        state = next;
        iterations += 1;
    }
    let (_, ll) = em_responsibilities(cyto, &state)?;
    trace.push(ll);
    Ok(EmFit {
        state,
        loglik_trace: trace,
        events,
        iterations,
    })
}

/// Put empty components on data points far from the surviving means, with
/// the pooled covariance and an equal share of the weight.
fn reseed(cyto: &Cytogram, state: &mut MixtureState, empty: &[usize], rng: &mut ChaCha8Rng) {
    let k = state.k();
    let (_, mut cov) = weighted_moments(cyto);
    regularize_covariance(&mut cov);
    for &kk in empty {
        let scores: Vec<f64> = cyto
            .points()
            .zip(cyto.weights())
            .map(|(y, w)| {
                let d = (0..k)
                    .filter(|j| !empty.contains(j) || *j < kk)
                    .map(|j| sq_dist(y, &state.mu[j]))
                    .fold(f64::INFINITY, f64::min);
                w * if d.is_finite() { d } else { 1.0 }
            })
            .collect();
        let idx = draw_weighted(&scores, rng)
            .or_else(|| draw_weighted(cyto.weights(), rng))
            .expect("cytogram has positive weight");
        state.mu[kk] = DVector::from_column_slice(cyto.point(idx));
        state.sigma[kk] = cov.clone();
        state.pi[kk] = 1.0 / k as f64;
    }
    let total: f64 = state.pi.iter().sum();
    for p in state.pi.iter_mut() {
        *p /= total;
    }
}

/// Time-constant start: pool a uniform subsample of times and bins, fit one
/// mixture and replicate it at every time.
pub fn constant_init(series: &CytoSeries, k: usize, config: &InitConfig) -> Result<ParamsSeries> {
    if config.n_times == 0 || config.n_points_per_time == 0 {
        return Err(Error::invalid("n_times and n_points_per_time must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.em.seed ^ 0x5EED_0000_C0A5_7A17);
    let t_count = series.len();
    let mut times: Vec<usize> = sample(&mut rng, t_count, config.n_times.min(t_count)).into_vec();
    times.sort_unstable();
    let d = series.dim();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for t in times {
        let c = series.get(t);
        let mut idx: Vec<usize> =
            sample(&mut rng, c.len(), config.n_points_per_time.min(c.len())).into_vec();
        idx.sort_unstable();
        for i in idx {
            points.extend_from_slice(c.point(i));
            weights.push(c.weight(i));
        }
    }
    let pooled = Cytogram::new(series.get(0).time(), d, points, weights)?;
    let em = standard_em(&pooled, k, &config.em)?;
    Ok(ParamsSeries::constant(series.times(), em.state))
}

/// Conjugate prior built from the previous time's estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct BayesState {
    /// Dirichlet prior counts, `n_{t-1,k}`.
    pub alpha: Vec<f64>,
    pub mean: Vec<DVector<f64>>,
    /// Inverse-Wishart scale, `n_{t-1,k} Σ_{t-1,k}`.
    pub psi: Vec<DMatrix<f64>>,
    /// Inverse-Wishart degrees of freedom, `n_{t-1,k} + d + 1`.
    pub nu: Vec<f64>,
}

impl BayesState {
    pub fn from_estimate(counts: &[f64], state: &MixtureState) -> Self {
        let d = state.dim() as f64;
        Self {
            alpha: counts.to_vec(),
            mean: state.mu.clone(),
            psi: state
                .sigma
                .iter()
                .zip(counts)
                .map(|(s, n)| s * *n)
                .collect(),
            nu: counts.iter().map(|n| n + d + 1.0).collect(),
        }
    }
}

/// Result of one posterior-mean step.
#[derive(Clone, Debug, PartialEq)]
pub struct BayesStep {
    pub state: MixtureState,
    /// Biomass-weighted counts `n_{t,k}` at the new time.
    pub counts: Vec<f64>,
    pub events: Vec<FitEvent>,
}

/// Posterior-mean update at one time.
///
/// `prev_counts` are `n_{t-1,k}` and `prev` the estimate at `t-1`; `gamma`
/// holds the time-t responsibilities (`n x K`) computed against `prev`.
pub fn bayes_update(
    cyto: &Cytogram,
    gamma: &[f64],
    prev_counts: &[f64],
    prev: &MixtureState,
    time_index: usize,
) -> BayesStep {
    let k = prev.k();
    let d = cyto.dim();
    let mut counts = vec![0.0; k];
    let mut sums = vec![DVector::zeros(d); k];
    for (i, y) in cyto.points().enumerate() {
        let w = cyto.weight(i);
        for kk in 0..k {
            let wg = w * gamma[i * k + kk];
            counts[kk] += wg;
            for j in 0..d {
                sums[kk][j] += wg * y[j];
            }
        }
    }
    let combined: Vec<f64> = prev_counts.iter().zip(&counts).map(|(a, b)| a + b).collect();
    let denom: f64 = combined.iter().sum();
    let mut events = Vec::new();
    let mut state = prev.clone();
    for kk in 0..k {
        state.pi[kk] = combined[kk] / denom;
        if !(combined[kk] > 0.0) {
            events.push(FitEvent::CarriedForward {
                time_index,
                cluster: Some(kk),
                reason: "zero combined count".into(),
            });
            continue;
        }
        let mean = (&prev.mu[kk] * prev_counts[kk] + &sums[kk]) / combined[kk];
        let mut scatter = &prev.sigma[kk] * prev_counts[kk];
        for (i, y) in cyto.points().enumerate() {
            let wg = cyto.weight(i) * gamma[i * k + kk];
            if wg == 0.0 {
                continue;
            }
            for p in 0..d {
                let rp = y[p] - mean[p];
                for q in 0..d {
                    scatter[(p, q)] += wg * rp * (y[q] - mean[q]);
                }
            }
        }
        let mut cov = scatter / combined[kk];
        if let Some(epsilon) = regularize_covariance(&mut cov) {
            events.push(FitEvent::Ridge {
                time_index,
                cluster: kk,
                epsilon,
            });
        }
        state.mu[kk] = mean;
        state.sigma[kk] = cov;
    }
    BayesStep {
        state,
        counts,
        events,
    }
}

/// Sequential posterior-mean start: classical EM at the first time, then one
/// E-step and one conjugate update per subsequent time.
pub fn bayesian_init(
    series: &CytoSeries,
    k: usize,
    config: &InitConfig,
) -> Result<(ParamsSeries, Vec<FitEvent>)> {
    let first = series.get(0);
    let em = standard_em(first, k, &config.em)?;
    let mut events = em.events.clone();
    let (gamma0, _) = em_responsibilities(first, &em.state)?;
    let mut counts = vec![0.0; k];
    for (i, row) in gamma0.chunks_exact(k).enumerate() {
        for (c, g) in counts.iter_mut().zip(row) {
            *c += first.weight(i) * g;
        }
    }
    let mut states = vec![em.state];
    for t in 1..series.len() {
        let prev = &states[t - 1];
        let cyto = series.get(t);
        let (gamma, _) = em_responsibilities(cyto, prev).map_err(|e| e.at_time(t - 1))?;
        let step = bayes_update(cyto, &gamma, &counts, prev, t);
        events.extend(step.events);
        counts = step.counts;
        states.push(step.state);
    }
    Ok((ParamsSeries::new(series.times(), states)?, events))
}

/// Dispatch on `config.method`.
pub fn initialize(
    series: &CytoSeries,
    k: usize,
    config: &InitConfig,
) -> Result<(ParamsSeries, Vec<FitEvent>)> {
    match config.method {
        InitMethod::Constant => Ok((constant_init(series, k, config)?, Vec::new())),
        InitMethod::Bayesian => bayesian_init(series, k, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64, n: usize, centers: &[f64], sd: f64) -> Cytogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ys = Vec::new();
        for c in centers {
            let nd = Normal::new(*c, sd).unwrap();
            for _ in 0..n {
                ys.push(nd.sample(&mut rng));
            }
        }
        Cytogram::unweighted(0.0, 1, ys).unwrap()
    }

    #[test]
    fn single_component_is_closed_form() {
        let c = Cytogram::new(0.0, 1, vec![1.0, 2.0, 4.0, 7.0], vec![1.0, 2.0, 0.5, 1.5]).unwrap();
        let one = EmOptions {
            max_iters: 1,
            ..EmOptions::default()
        };
        let fit = standard_em(&c, 1, &one).unwrap();
        let (m, v) = weighted_moments(&c);
        assert_eq!(fit.state.pi, vec![1.0]);
        assert_relative_eq!(fit.state.mu[0][0], m[0], max_relative = 1e-14);
        assert_relative_eq!(fit.state.sigma[0][(0, 0)], v[(0, 0)], max_relative = 1e-13);
        assert_eq!(fit.iterations, 1);
    }

    #[test]
    fn separated_blobs_recover_means() {
        let c = blobs(3, 200, &[-5.0, 5.0], 0.3);
        let fit = standard_em(&c, 2, &EmOptions::default()).unwrap();
        let mut means: Vec<f64> = fit.state.mu.iter().map(|m| m[0]).collect();
        means.sort_by(f64::total_cmp);
        assert!((means[0] + 5.0).abs() < 0.1, "{means:?}");
        assert!((means[1] - 5.0).abs() < 0.1, "{means:?}");
    }

    #[test]
    fn loglik_never_decreases() {
        let c = blobs(11, 80, &[-1.0, 0.5, 2.0], 0.8);
        for seed in 0..5 {
            let fit = standard_em(&c, 3, &EmOptions { seed, ..EmOptions::default() }).unwrap();
            for w in fit.loglik_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{w:?}");
            }
        }
    }

    #[test]
    fn too_few_points_rejected() {
        let c = Cytogram::unweighted(0.0, 1, vec![1.0, 2.0]).unwrap();
        assert!(standard_em(&c, 2, &EmOptions::default()).is_err());
    }

    #[test]
    fn bayes_mean_hand_case() {
        // n_{t-1,k} = 2 at μ = 0; two unit points at 3 fully in the cluster.
        let prev = MixtureState::new(
            vec![1.0],
            vec![DVector::from_vec(vec![0.0])],
            vec![DMatrix::from_element(1, 1, 1.0)],
        )
        .unwrap();
        let c = Cytogram::unweighted(1.0, 1, vec![3.0, 3.0]).unwrap();
        let step = bayes_update(&c, &[1.0, 1.0], &[2.0], &prev, 1);
        assert_eq!(step.state.mu[0][0], 1.5);
        assert_eq!(step.state.pi, vec![1.0]);
        assert_eq!(step.counts, vec![2.0]);
    }

    #[test]
    fn bayes_zero_new_mass_keeps_mean() {
        let prev = MixtureState::new(
            vec![0.5, 0.5],
            vec![DVector::from_vec(vec![-1.0]), DVector::from_vec(vec![4.0])],
            vec![DMatrix::from_element(1, 1, 1.0); 2],
        )
        .unwrap();
        let c = Cytogram::unweighted(1.0, 1, vec![-1.2, -0.8]).unwrap();
        let step = bayes_update(&c, &[1.0, 0.0, 1.0, 0.0], &[3.0, 5.0], &prev, 1);
        assert_eq!(step.state.mu[1][0], 4.0);
        assert_relative_eq!(step.state.pi[0], 5.0 / 10.0);
        assert_relative_eq!(step.state.pi[1], 5.0 / 10.0);
    }

    #[test]
    fn bayes_equal_masses_give_midpoint() {
        let prev = MixtureState::new(
            vec![1.0],
            vec![DVector::from_vec(vec![1.0])],
            vec![DMatrix::from_element(1, 1, 1.0)],
        )
        .unwrap();
        let c = Cytogram::unweighted(1.0, 1, vec![2.0, 4.0]).unwrap();
        let step = bayes_update(&c, &[1.0, 1.0], &[2.0], &prev, 1);
        assert_relative_eq!(step.state.mu[0][0], (1.0 + 3.0) / 2.0);
    }

    fn three_cluster_series(seed: u64) -> CytoSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [-6.0, 0.0, 6.0];
        let cytos = (0..20)
            .map(|t| {
                let mut ys = Vec::new();
                for c in centers {
                    let nd = Normal::new(c + 0.02 * t as f64, 0.5).unwrap();
                    for _ in 0..30 {
                        ys.push(nd.sample(&mut rng));
                    }
                }
                Cytogram::unweighted(t as f64, 1, ys).unwrap()
            })
            .collect();
        CytoSeries::new(cytos).unwrap()
    }

    #[test]
    fn constant_init_is_constant_and_matches_truth() {
        let series = three_cluster_series(5);
        let p = constant_init(&series, 3, &InitConfig::default()).unwrap();
        assert!(p.states().iter().all(|s| s == p.state(0)));
        let mut means: Vec<f64> = p.state(0).mu.iter().map(|m| m[0]).collect();
        means.sort_by(f64::total_cmp);
        for (m, truth) in means.iter().zip([-6.0, 0.0, 6.0]) {
            assert!((m - truth).abs() < 1.5, "{means:?}");
        }
    }

    #[test]
    fn saturated_constant_init_is_pooled_em() {
        let series = three_cluster_series(6);
        let config = InitConfig {
            n_times: 1000,
            n_points_per_time: 1000,
            ..InitConfig::default()
        };
        let p = constant_init(&series, 3, &config).unwrap();
        let pooled = series.pooled(0.0).unwrap();
        let em = standard_em(&pooled, 3, &config.em).unwrap();
        assert_eq!(p.state(0), &em.state);
    }

    #[test]
    fn bayesian_init_rows_normalized() {
        let series = three_cluster_series(7);
        let (p, _) = bayesian_init(&series, 3, &InitConfig::default()).unwrap();
        for s in p.states() {
            assert!((s.pi.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for sig in &s.sigma {
                assert!(sig.clone().cholesky().is_some());
            }
        }
    }
}
