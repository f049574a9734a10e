//! Kernel-smoothed EM.
//!
//! The E-step is the classical mixture E-step applied independently at each
//! time. The M-step forms per-time sufficient statistics (cluster masses,
//! first moments, residual outer products) and blends them across time with
//! an unnormalized kernel, so the updates can be evaluated at any query time.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    component_log_terms, log_sum_exp, regularize_covariance, Bandwidths, CytoSeries, FitEvent,
    KernelFamily, KernelSpec, MixtureState, ParamsSeries, Responsibilities,
};

/// Smoothed mass below this fraction of the smoothed total counts as vanished.
pub const VANISHED_FRACTION: f64 = 1e-8;

/// Kernel family, cutoff and the three bandwidths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Smoother {
    pub family: KernelFamily,
    pub cutoff: f64,
    pub bandwidths: Bandwidths,
}

impl Smoother {
    pub fn gaussian(bandwidths: Bandwidths) -> Self {
        Self {
            family: KernelFamily::Gaussian,
            cutoff: KernelSpec::DEFAULT_CUTOFF,
            bandwidths,
        }
    }

    pub fn boxcar(bandwidths: Bandwidths) -> Self {
        Self {
            family: KernelFamily::Boxcar,
            ..Self::gaussian(bandwidths)
        }
    }

    fn kernel(&self, h: f64) -> Result<KernelSpec> {
        KernelSpec::new(self.family, h, self.cutoff)
    }

    pub fn pi_kernel(&self) -> Result<KernelSpec> {
        self.kernel(self.bandwidths.h_pi)
    }

    pub fn mu_kernel(&self) -> Result<KernelSpec> {
        self.kernel(self.bandwidths.h_mu)
    }

    pub fn sigma_kernel(&self) -> Result<KernelSpec> {
        self.kernel(self.bandwidths.h_sigma)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub smoother: Smoother,
    pub max_iters: usize,
    /// Stop once `|Δloglik| / |loglik|` drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(k: usize, bandwidths: Bandwidths) -> Self {
        Self {
            k,
            smoother: Smoother::gaussian(bandwidths),
            max_iters: 100,
            tol: 1e-6,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        Bandwidths::new(
            self.smoother.bandwidths.h_pi,
            self.smoother.bandwidths.h_mu,
            self.smoother.bandwidths.h_sigma,
        )?;
        self.smoother.pi_kernel()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub params: ParamsSeries,
    /// Responsibilities from one final E-step on `params`.
    pub resp: Responsibilities,
    pub loglik_trace: Vec<f64>,
    pub events: Vec<FitEvent>,
    /// Number of M-steps performed.
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) struct EStep {
    pub resp: Responsibilities,
    pub loglik: f64,
    pub events: Vec<FitEvent>,
}

pub(crate) fn e_step_detailed(series: &CytoSeries, params: &ParamsSeries) -> Result<EStep> {
    params.check_aligned(series)?;
    let k = params.k();
    let per_time: Vec<(Vec<f64>, f64, Vec<FitEvent>)> = series
        .cytograms()
        .par_iter()
        .zip(params.states().par_iter())
        .enumerate()
        .map(|(t, (cyto, state))| {
            let comps = state.components().map_err(|e| e.at_time(t))?;
            let log_pi: Vec<f64> = state.pi.iter().map(|p| p.ln()).collect();
            let mut gamma = vec![0.0; cyto.len() * k];
            let mut terms = vec![0.0; k];
            let mut ll = 0.0;
            let mut events = Vec::new();
            for (i, y) in cyto.points().enumerate() {
                component_log_terms(&log_pi, &comps, y, &mut terms);
                let lse = log_sum_exp(&terms);
                let row = &mut gamma[i * k..(i + 1) * k];
                if lse.is_finite() {
                    for (g, term) in row.iter_mut().zip(&terms) {
                        *g = (term - lse).exp();
                    }
                    let w = cyto.weight(i);
                    if w > 0.0 {
                        ll += w * lse;
                    }
                } else {
                    row.fill(1.0 / k as f64);
                    events.push(FitEvent::Underflow {
                        time_index: t,
                        point: i,
                    });
                }
            }
            Ok((gamma, ll, events))
        })
        .collect::<Result<_>>()?;

    let mut gamma = Vec::with_capacity(per_time.len());
    let mut loglik = 0.0;
    let mut events = Vec::new();
    for (g, ll, ev) in per_time {
        gamma.push(g);
        loglik += ll;
        events.extend(ev);
    }
    Ok(EStep {
        resp: Responsibilities::from_gamma(series, k, gamma)?,
        loglik,
        events,
    })
}

/// Posterior cluster probabilities at every point, computed in log space.
pub fn e_step(series: &CytoSeries, params: &ParamsSeries) -> Result<Responsibilities> {
    Ok(e_step_detailed(series, params)?.resp)
}

/// Nonzero kernel weights `(s, w(t - s))` in time order.
fn weights_at(kernel: &KernelSpec, data_times: &[f64], t: f64) -> Vec<(usize, f64)> {
    data_times
        .iter()
        .enumerate()
        .filter_map(|(s, ts)| {
            let w = kernel.weight(t - ts);
            (w > 0.0).then_some((s, w))
        })
        .collect()
}

fn check_resp(series: &CytoSeries, resp: &Responsibilities) -> Result<()> {
    if resp.len() != series.len() {
        return Err(Error::DimensionMismatch(format!(
            "responsibilities for {} times, series has {}",
            resp.len(),
            series.len()
        )));
    }
    Ok(())
}

fn check_hold(hold: Option<&[MixtureState]>, query_times: &[f64]) -> Result<()> {
    match hold {
        Some(h) if h.len() != query_times.len() => Err(Error::DimensionMismatch(format!(
            "{} held states for {} query times",
            h.len(),
            query_times.len()
        ))),
        _ => Ok(()),
    }
}

fn totals(series: &CytoSeries) -> Vec<f64> {
    series.iter().map(|c| c.total_weight()).collect()
}

/// Smoothed mixing proportions, `T' x K`.
pub fn m_step_pi(
    series: &CytoSeries,
    resp: &Responsibilities,
    kernel: &KernelSpec,
    query_times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_resp(series, resp)?;
    let data_times = series.times();
    let n = totals(series);
    let mass = resp.cluster_mass();
    let k = resp.k();
    query_times
        .par_iter()
        .map(|&t| {
            let ws = weights_at(kernel, &data_times, t);
            let denom: f64 = ws.iter().map(|&(s, w)| w * n[s]).sum();
            if !(denom > 0.0) {
                return Err(Error::ZeroKernelMass { time: t });
            }
            let mut row = vec![0.0; k];
            for &(s, w) in &ws {
                for (r, m) in row.iter_mut().zip(&mass[s]) {
                    *r += w * m;
                }
            }
            for r in row.iter_mut() {
                *r /= denom;
            }
            // Σ_k n̂_sk equals n_s only up to rounding.
            let sum: f64 = row.iter().sum();
            for r in row.iter_mut() {
                *r = (*r / sum).clamp(0.0, 1.0);
            }
            Ok(row)
        })
        .collect()
}

/// Per-(s, k) first moments `Σ_i C γ Y`.
fn first_moments(series: &CytoSeries, resp: &Responsibilities) -> Vec<Vec<DVector<f64>>> {
    let k = resp.k();
    let d = series.dim();
    series
        .cytograms()
        .par_iter()
        .enumerate()
        .map(|(s, cyto)| {
            let mut acc = vec![DVector::zeros(d); k];
            for (i, y) in cyto.points().enumerate() {
                let w = cyto.weight(i);
                for (a, g) in acc.iter_mut().zip(resp.row(s, i)) {
                    let wg = w * g;
                    for j in 0..d {
                        a[j] += wg * y[j];
                    }
                }
            }
            acc
        })
        .collect()
}

/// Per-(s, k) residual scatter `Σ_i C γ (Y - μ_sk)(Y - μ_sk)ᵀ`.
fn residual_scatter(
    series: &CytoSeries,
    resp: &Responsibilities,
    mu_at_data: &[Vec<DVector<f64>>],
) -> Vec<Vec<DMatrix<f64>>> {
    let k = resp.k();
    let d = series.dim();
    series
        .cytograms()
        .par_iter()
        .enumerate()
        .map(|(s, cyto)| {
            let mut acc = vec![DMatrix::zeros(d, d); k];
            let mut r = vec![0.0; d];
            for (i, y) in cyto.points().enumerate() {
                let w = cyto.weight(i);
                for (kk, (a, g)) in acc.iter_mut().zip(resp.row(s, i)).enumerate() {
                    let wg = w * g;
                    let m = &mu_at_data[s][kk];
                    for j in 0..d {
                        r[j] = y[j] - m[j];
                    }
                    for p in 0..d {
                        for q in 0..d {
                            a[(p, q)] += wg * r[p] * r[q];
                        }
                    }
                }
            }
            acc
        })
        .collect()
}

/// Smoothed cluster means, `T' x K` vectors of length `d`.
///
/// A cluster whose smoothed mass falls below [`VANISHED_FRACTION`] of the
/// smoothed total keeps its mean from `hold`; without `hold` that is an error.
pub fn m_step_mu(
    series: &CytoSeries,
    resp: &Responsibilities,
    kernel: &KernelSpec,
    query_times: &[f64],
    hold: Option<&[MixtureState]>,
) -> Result<(Vec<Vec<DVector<f64>>>, Vec<FitEvent>)> {
    check_resp(series, resp)?;
    check_hold(hold, query_times)?;
    let first = first_moments(series, resp);
    smooth_means(series, resp, &first, kernel, query_times, hold)
}

fn smooth_means(
    series: &CytoSeries,
    resp: &Responsibilities,
    first: &[Vec<DVector<f64>>],
    kernel: &KernelSpec,
    query_times: &[f64],
    hold: Option<&[MixtureState]>,
) -> Result<(Vec<Vec<DVector<f64>>>, Vec<FitEvent>)> {
    let data_times = series.times();
    let n = totals(series);
    let mass = resp.cluster_mass();
    let k = resp.k();
    let d = series.dim();
    let rows: Vec<(Vec<DVector<f64>>, Vec<FitEvent>)> = query_times
        .par_iter()
        .enumerate()
        .map(|(q, &t)| {
            let ws = weights_at(kernel, &data_times, t);
            let total: f64 = ws.iter().map(|&(s, w)| w * n[s]).sum();
            if !(total > 0.0) {
                return Err(Error::ZeroKernelMass { time: t });
            }
            let mut means = Vec::with_capacity(k);
            let mut events = Vec::new();
            for kk in 0..k {
                let denom: f64 = ws.iter().map(|&(s, w)| w * mass[s][kk]).sum();
                if denom < VANISHED_FRACTION * total {
                    let held = hold.ok_or(Error::VanishedCluster { time: t, cluster: kk })?;
                    means.push(held[q].mu[kk].clone());
                    events.push(FitEvent::VanishedCluster { time: t, cluster: kk });
                    continue;
                }
                let mut m = DVector::zeros(d);
                for &(s, w) in &ws {
                    m.axpy(w, &first[s][kk], 1.0);
                }
                means.push(m / denom);
            }
            Ok((means, events))
        })
        .collect::<Result<_>>()?;
    Ok(unzip_events(rows))
}

fn unzip_events<T>(rows: Vec<(T, Vec<FitEvent>)>) -> (Vec<T>, Vec<FitEvent>) {
    let mut out = Vec::with_capacity(rows.len());
    let mut events = Vec::new();
    for (v, ev) in rows {
        out.push(v);
        events.extend(ev);
    }
    (out, events)
}

/// Smoothed covariances about `mu_at_data` (the current means at the data
/// times), symmetrized and ridge-regularized.
pub fn m_step_sigma(
    series: &CytoSeries,
    resp: &Responsibilities,
    mu_at_data: &[Vec<DVector<f64>>],
    kernel: &KernelSpec,
    query_times: &[f64],
    hold: Option<&[MixtureState]>,
) -> Result<(Vec<Vec<DMatrix<f64>>>, Vec<FitEvent>)> {
    check_resp(series, resp)?;
    check_hold(hold, query_times)?;
    if mu_at_data.len() != series.len() {
        return Err(Error::DimensionMismatch("means at data times misaligned".into()));
    }
    let scatter = residual_scatter(series, resp, mu_at_data);
    let data_times = series.times();
    let n = totals(series);
    let mass = resp.cluster_mass();
    let k = resp.k();
    let d = series.dim();
    let rows: Vec<(Vec<DMatrix<f64>>, Vec<FitEvent>)> = query_times
        .par_iter()
        .enumerate()
        .map(|(q, &t)| {
            let ws = weights_at(kernel, &data_times, t);
            let total: f64 = ws.iter().map(|&(s, w)| w * n[s]).sum();
            if !(total > 0.0) {
                return Err(Error::ZeroKernelMass { time: t });
            }
            let mut covs = Vec::with_capacity(k);
            let mut events = Vec::new();
            for kk in 0..k {
                let denom: f64 = ws.iter().map(|&(s, w)| w * mass[s][kk]).sum();
                if denom < VANISHED_FRACTION * total {
                    let held = hold.ok_or(Error::VanishedCluster { time: t, cluster: kk })?;
                    covs.push(held[q].sigma[kk].clone());
                    events.push(FitEvent::VanishedCluster { time: t, cluster: kk });
                    continue;
                }
                let mut c = DMatrix::zeros(d, d);
                for &(s, w) in &ws {
                    c += &scatter[s][kk] * w;
                }
                c /= denom;
                if let Some(epsilon) = regularize_covariance(&mut c) {
                    events.push(FitEvent::Ridge {
                        time_index: q,
                        cluster: kk,
                        epsilon,
                    });
                }
                covs.push(c);
            }
            Ok((covs, events))
        })
        .collect::<Result<_>>()?;
    Ok(unzip_events(rows))
}

/// All three smoothed updates at `query_times`.
///
/// `hold_query` / `hold_data` supply the states kept for vanished clusters at
/// the query times and at the data times respectively.
pub fn m_step(
    series: &CytoSeries,
    resp: &Responsibilities,
    smoother: &Smoother,
    query_times: &[f64],
    hold_query: Option<&[MixtureState]>,
    hold_data: Option<&[MixtureState]>,
) -> Result<(ParamsSeries, Vec<FitEvent>)> {
    check_resp(series, resp)?;
    let data_times = series.times();
    let mu_kernel = smoother.mu_kernel()?;
    let pi = m_step_pi(series, resp, &smoother.pi_kernel()?, query_times)?;
    let first = first_moments(series, resp);
    let mut events = Vec::new();

    let same_grid = query_times == data_times.as_slice();
    let (mu_data, ev) = smooth_means(series, resp, &first, &mu_kernel, &data_times, hold_data)?;
    events.extend(ev);
    let mu_query = if same_grid {
        mu_data.clone()
    } else {
        let (m, ev) = smooth_means(series, resp, &first, &mu_kernel, query_times, hold_query)?;
        events.extend(ev);
        m
    };
    let (sigma, ev) = m_step_sigma(
        series,
        resp,
        &mu_data,
        &smoother.sigma_kernel()?,
        query_times,
        hold_query,
    )?;
    events.extend(ev);

    let states = pi
        .into_iter()
        .zip(mu_query)
        .zip(sigma)
        .map(|((pi, mu), sigma)| MixtureState { pi, mu, sigma })
        .collect();
    Ok((ParamsSeries::new(query_times.to_vec(), states)?, events))
}

/// One E-step followed by one smoothed M-step at the data times.
pub fn kem_iteration(
    series: &CytoSeries,
    params: &ParamsSeries,
    smoother: &Smoother,
) -> Result<ParamsSeries> {
    let resp = e_step(series, params)?;
    let times = series.times();
    Ok(m_step(series, &resp, smoother, &times, Some(params.states()), Some(params.states()))?.0)
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    let scale = cur.abs();
    if scale > 0.0 {
        (cur - prev).abs() / scale
    } else {
        (cur - prev).abs()
    }
}

/// Alternate E-steps and smoothed M-steps from `init`.
pub fn fit(series: &CytoSeries, init: &ParamsSeries, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    init.check_aligned(series)?;
    if init.k() != config.k {
        return Err(Error::invalid(format!(
            "initialization has {} clusters, config asks for {}",
            init.k(),
            config.k
        )));
    }
    if config.k > series.effective_points() {
        return Err(Error::invalid(format!(
            "K = {} exceeds the {} positively weighted points",
            config.k,
            series.effective_points()
        )));
    }
    let init = init.with_times(series.times())?;
    let times = series.times();

    let mut params = init;
    let mut trace = Vec::new();
    let mut events = Vec::new();
    let mut iterations = 0;
    let mut final_resp = None;
    for _ in 0..config.max_iters {
        let es = e_step_detailed(series, &params)?;
        events.extend(es.events);
        if let Some(&prev) = trace.last() {
            if relative_change(prev, es.loglik) < config.tol {
                trace.push(es.loglik);
                final_resp = Some(es.resp);
                break;
            }
        }
        trace.push(es.loglik);
        let (next, ev) = m_step(
            series,
            &es.resp,
            &config.smoother,
            &times,
            Some(params.states()),
            Some(params.states()),
        )?;
        events.extend(ev);
        params = next;
        iterations += 1;
    }
    let converged = final_resp.is_some();
    let resp = match final_resp {
        Some(r) => r,
        None => {
            let es = e_step_detailed(series, &params)?;
            events.extend(es.events);
            trace.push(es.loglik);
            es.resp
        }
    };
    Ok(FitResult {
        params,
        resp,
        loglik_trace: trace,
        events,
        iterations,
        converged,
    })
}

/// Evaluate the smoothed updates at arbitrary times from a completed fit.
///
/// Clusters that vanish at a new time hold the fitted state at the nearest
/// data time.
pub fn predict_at_times(
    series: &CytoSeries,
    fit: &FitResult,
    smoother: &Smoother,
    new_times: &[f64],
) -> Result<(ParamsSeries, Vec<FitEvent>)> {
    if let Some(t) = new_times.iter().find(|t| !t.is_finite()) {
        return Err(Error::invalid(format!("non-finite prediction time {t}")));
    }
    fit.params.check_aligned(series)?;
    let hold_query: Vec<MixtureState> = new_times
        .iter()
        .map(|&t| fit.params.state(fit.params.nearest_index(t)).clone())
        .collect();
    m_step(
        series,
        &fit.resp,
        smoother,
        new_times,
        Some(&hold_query),
        Some(fit.params.states()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Cytogram;
    use approx::assert_relative_eq;

    fn state_1d(pi: &[f64], mu: &[f64], var: &[f64]) -> MixtureState {
        MixtureState::new(
            pi.to_vec(),
            mu.iter().map(|m| DVector::from_vec(vec![*m])).collect(),
            var.iter().map(|v| DMatrix::from_element(1, 1, *v)).collect(),
        )
        .unwrap()
    }

    fn series_1d(data: &[(f64, Vec<f64>, Vec<f64>)]) -> CytoSeries {
        CytoSeries::new(
            data.iter()
                .map(|(t, y, w)| Cytogram::new(*t, 1, y.clone(), w.clone()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn e_step_single_cluster_is_certain() {
        let s = series_1d(&[(0.0, vec![-3.0, 0.0, 10.0], vec![1.0, 2.0, 1.0])]);
        let p = ParamsSeries::constant(vec![0.0], state_1d(&[1.0], &[0.0], &[1.0]));
        let r = e_step(&s, &p).unwrap();
        assert!(r.gamma(0).iter().all(|g| *g == 1.0));
        assert_relative_eq!(r.cluster_mass()[0][0], 4.0);
    }

    #[test]
    fn e_step_equidistant_point_splits_evenly() {
        let s = series_1d(&[(0.0, vec![0.0], vec![1.0])]);
        let p = ParamsSeries::constant(vec![0.0], state_1d(&[0.5, 0.5], &[-2.0, 2.0], &[1.0, 1.0]));
        let r = e_step(&s, &p).unwrap();
        assert_relative_eq!(r.row(0, 0)[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(r.row(0, 0)[1], 0.5, max_relative = 1e-15);
    }

    #[test]
    fn e_step_matches_density_ratio() {
        let s = series_1d(&[(0.0, vec![0.5], vec![1.0])]);
        let p = ParamsSeries::constant(vec![0.0], state_1d(&[0.5, 0.5], &[-1.0, 1.0], &[1.0, 1.0]));
        let r = e_step(&s, &p).unwrap();
        // φ(0.5; 1, 1) / φ(0.5; -1, 1) = exp(2 * 0.5 * 1 * 2 / 2) = e^1
        let phi = |y: f64, m: f64| (-(y - m) * (y - m) / 2.0).exp();
        let expected = phi(0.5, 1.0) / (phi(0.5, 1.0) + phi(0.5, -1.0));
        assert_relative_eq!(r.row(0, 0)[1], expected, max_relative = 1e-14);
        assert_relative_eq!(expected, 1.0 / (1.0 + (-1.0f64).exp()), max_relative = 1e-14);
    }

    fn resp_from(s: &CytoSeries, k: usize, gamma: Vec<Vec<f64>>) -> Responsibilities {
        Responsibilities::from_gamma(s, k, gamma).unwrap()
    }

    #[test]
    fn pi_two_term_hand_case() {
        // n̂ = [[3,1],[1,3]], n = (4,4): four unit points per time.
        let s = series_1d(&[
            (0.0, vec![0.0; 4], vec![1.0; 4]),
            (1.0, vec![0.0; 4], vec![1.0; 4]),
        ]);
        let g0 = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let g1 = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let r = resp_from(&s, 2, vec![g0, g1]);
        let pi = m_step_pi(&s, &r, &KernelSpec::gaussian(1.0), &[0.0]).unwrap();
        let w = (-0.5f64).exp();
        assert_relative_eq!(pi[0][0], (3.0 + w) / (4.0 + 4.0 * w), max_relative = 1e-14);
        assert_relative_eq!(pi[0][1], (1.0 + 3.0 * w) / (4.0 + 4.0 * w), max_relative = 1e-14);
    }

    #[test]
    fn pi_limits() {
        let s = series_1d(&[
            (0.0, vec![0.0; 2], vec![1.0, 3.0]),
            (1.0, vec![0.0; 2], vec![2.0, 2.0]),
            (2.5, vec![0.0; 2], vec![1.0, 1.0]),
        ]);
        let r = resp_from(
            &s,
            2,
            vec![vec![1.0, 0.0, 0.25, 0.75], vec![0.5, 0.5, 0.0, 1.0], vec![0.9, 0.1, 0.2, 0.8]],
        );
        let mass = r.cluster_mass().to_vec();
        let n: Vec<f64> = s.iter().map(|c| c.total_weight()).collect();
        let times = s.times();

        let delta = m_step_pi(&s, &r, &KernelSpec::boxcar(0.5), &times).unwrap();
        for t in 0..3 {
            for k in 0..2 {
                assert_relative_eq!(delta[t][k], mass[t][k] / n[t], max_relative = 1e-14);
            }
        }
        let pooled = m_step_pi(&s, &r, &KernelSpec::boxcar(1e9), &times).unwrap();
        let ntot: f64 = n.iter().sum();
        for t in 0..3 {
            for k in 0..2 {
                let m: f64 = mass.iter().map(|row| row[k]).sum();
                assert_relative_eq!(pooled[t][k], m / ntot, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn pi_zero_kernel_mass_is_error() {
        let s = series_1d(&[(0.0, vec![0.0], vec![1.0]), (1.0, vec![0.0], vec![1.0])]);
        let r = resp_from(&s, 1, vec![vec![1.0], vec![1.0]]);
        let err = m_step_pi(&s, &r, &KernelSpec::gaussian(1.0), &[50.0]).unwrap_err();
        assert!(matches!(err, Error::ZeroKernelMass { time } if time == 50.0));
    }

    /// Direct double sum over (s, i), independent of the statistics path.
    fn naive_mu_sigma(
        s: &CytoSeries,
        r: &Responsibilities,
        kernel: &KernelSpec,
        t: f64,
        k: usize,
        mu_data: &[f64],
    ) -> (f64, f64) {
        let (mut num, mut den, mut sq) = (0.0, 0.0, 0.0);
        for (si, c) in s.iter().enumerate() {
            let w = kernel.weight(t - c.time());
            for i in 0..c.len() {
                let g = r.row(si, i)[k];
                let y = c.point(i)[0];
                num += w * c.weight(i) * g * y;
                den += w * c.weight(i) * g;
                sq += w * c.weight(i) * g * (y - mu_data[si]).powi(2);
            }
        }
        (num / den, sq / den)
    }

    #[test]
    fn mu_sigma_match_naive_double_sum() {
        let s = series_1d(&[
            (0.0, vec![-1.0, 0.5, 2.0], vec![1.0, 2.0, 0.5]),
            (1.5, vec![0.0, 3.0], vec![1.0, 1.0]),
        ]);
        let r = resp_from(&s, 2, vec![vec![0.9, 0.1, 0.6, 0.4, 0.2, 0.8], vec![0.7, 0.3, 0.05, 0.95]]);
        let kernel = KernelSpec::gaussian(1.2);
        let times = s.times();
        let (mu, _) = m_step_mu(&s, &r, &kernel, &times, None).unwrap();
        let (sig, _) = m_step_sigma(&s, &r, &mu, &kernel, &[0.7], None).unwrap();
        for k in 0..2 {
            let mu_data: Vec<f64> = mu.iter().map(|m| m[k][0]).collect();
            for (q, &t) in times.iter().enumerate() {
                let (m, _) = naive_mu_sigma(&s, &r, &kernel, t, k, &mu_data);
                assert_relative_eq!(mu[q][k][0], m, max_relative = 1e-12);
            }
            let (_, v) = naive_mu_sigma(&s, &r, &kernel, 0.7, k, &mu_data);
            assert_relative_eq!(sig[0][k][(0, 0)], v, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_point_sigma_gets_ridge() {
        let s = series_1d(&[(0.0, vec![1.0], vec![1.0]), (1.0, vec![2.0], vec![1.0])]);
        let r = resp_from(&s, 1, vec![vec![1.0], vec![1.0]]);
        let kernel = KernelSpec::boxcar(0.5);
        let times = s.times();
        let (mu, _) = m_step_mu(&s, &r, &kernel, &times, None).unwrap();
        assert_eq!(mu[0][0][0], 1.0);
        let (sig, ev) = m_step_sigma(&s, &r, &mu, &kernel, &times, None).unwrap();
        assert_eq!(sig[0][0][(0, 0)], crate::model::RIDGE_FLOOR);
        assert_eq!(ev.len(), 2);
        assert!(matches!(ev[0], FitEvent::Ridge { .. }));
    }

    #[test]
    fn vanished_cluster_holds_previous_state() {
        let s = series_1d(&[(0.0, vec![1.0, 2.0], vec![1.0, 1.0])]);
        let r = resp_from(&s, 2, vec![vec![1.0, 0.0, 1.0, 0.0]]);
        let prev = state_1d(&[0.5, 0.5], &[0.0, 7.0], &[1.0, 3.0]);
        let kernel = KernelSpec::gaussian(1.0);
        assert!(matches!(
            m_step_mu(&s, &r, &kernel, &[0.0], None),
            Err(Error::VanishedCluster { cluster: 1, .. })
        ));
        let (mu, ev) = m_step_mu(&s, &r, &kernel, &[0.0], Some(std::slice::from_ref(&prev))).unwrap();
        assert_eq!(mu[0][1][0], 7.0);
        assert_eq!(ev, vec![FitEvent::VanishedCluster { time: 0.0, cluster: 1 }]);
    }

    #[test]
    fn single_time_fit_is_classical_em() {
        let ys: Vec<f64> = vec![-2.1, -1.9, -2.3, -1.7, 2.0, 2.2, 1.8, 2.4];
        let s = series_1d(&[(0.0, ys.clone(), vec![1.0; 8])]);
        let init = ParamsSeries::constant(vec![0.0], state_1d(&[0.4, 0.6], &[-1.0, 1.0], &[1.0, 1.0]));
        let smoother = Smoother::gaussian(Bandwidths::uniform(3.0));
        let next = kem_iteration(&s, &init, &smoother).unwrap();

        // Classical update by hand.
        let st = init.state(0);
        let dens = |y: f64, k: usize| {
            st.pi[k] * (-(y - st.mu[k][0]).powi(2) / (2.0 * st.sigma[k][(0, 0)])).exp()
                / st.sigma[k][(0, 0)].sqrt()
        };
        for k in 0..2 {
            let g: Vec<f64> = ys.iter().map(|&y| dens(y, k) / (dens(y, 0) + dens(y, 1))).collect();
            let nk: f64 = g.iter().sum();
            let mk: f64 = g.iter().zip(&ys).map(|(g, y)| g * y).sum::<f64>() / nk;
            let vk: f64 = g.iter().zip(&ys).map(|(g, y)| g * (y - mk).powi(2)).sum::<f64>() / nk;
            assert_relative_eq!(next.state(0).pi[k], nk / 8.0, max_relative = 1e-12);
            assert_relative_eq!(next.state(0).mu[k][0], mk, max_relative = 1e-12);
            assert_relative_eq!(next.state(0).sigma[k][(0, 0)], vk, max_relative = 1e-12);
        }
    }

    #[test]
    fn predict_blends_two_points() {
        let s = series_1d(&[(0.0, vec![0.0, 1.0], vec![1.0, 1.0]), (2.0, vec![4.0, 6.0], vec![1.0, 3.0])]);
        let init = ParamsSeries::constant(vec![0.0, 2.0], state_1d(&[1.0], &[0.0], &[1.0]));
        let mut config = FitConfig::new(1, Bandwidths::uniform(1.0));
        config.smoother = Smoother::boxcar(Bandwidths::uniform(1.0));
        config.max_iters = 3;
        let f = fit(&s, &init, &config).unwrap();
        let (p, _) = predict_at_times(&s, &f, &config.smoother, &[1.0]).unwrap();
        // Both data times at distance 1 with weight 1: pooled weighted mean.
        let mean = (0.0 + 1.0 + 4.0 + 3.0 * 6.0) / 6.0;
        assert_relative_eq!(p.state(0).mu[0][0], mean, max_relative = 1e-14);
        // Σ residuals use the per-time (delta-limit) means at data times.
        let m0 = 0.5;
        let m1 = (4.0 + 18.0) / 4.0;
        let ss = (0.25 + 0.25) + ((4.0f64 - m1).powi(2) + 3.0 * (6.0f64 - m1).powi(2));
        assert_relative_eq!(m0, f.params.state(0).mu[0][0], max_relative = 1e-14);
        assert_relative_eq!(p.state(0).sigma[0][(0, 0)], ss / 6.0, max_relative = 1e-13);

        let err = predict_at_times(&s, &f, &config.smoother, &[40.0]).unwrap_err();
        assert!(matches!(err, Error::ZeroKernelMass { .. }));
    }

    #[test]
    fn predict_at_data_times_repeats_m_step() {
        let s = series_1d(&[
            (0.0, vec![-1.0, 1.2, 0.3], vec![1.0, 1.0, 2.0]),
            (1.0, vec![-0.8, 1.1], vec![1.0, 1.0]),
            (2.0, vec![-1.1, 0.9, 1.0], vec![1.0, 1.0, 1.0]),
        ]);
        let init = ParamsSeries::constant(s.times(), state_1d(&[0.5, 0.5], &[-1.0, 1.0], &[0.5, 0.5]));
        let config = FitConfig::new(2, Bandwidths::uniform(1.0));
        let f = fit(&s, &init, &config).unwrap();
        let (p, _) = predict_at_times(&s, &f, &config.smoother, &s.times()).unwrap();
        let times = s.times();
        let (m, _) = m_step(
            &s,
            &f.resp,
            &config.smoother,
            &times,
            Some(f.params.states()),
            Some(f.params.states()),
        )
        .unwrap();
        assert_eq!(p, m);
    }

    #[test]
    fn fit_rejects_too_many_clusters() {
        let s = series_1d(&[(0.0, vec![0.0, 1.0], vec![1.0, 0.0])]);
        let init = ParamsSeries::constant(vec![0.0], state_1d(&[0.5, 0.5], &[0.0, 1.0], &[1.0, 1.0]));
        let config = FitConfig::new(2, Bandwidths::uniform(1.0));
        assert!(fit(&s, &init, &config).is_err());
    }
}
