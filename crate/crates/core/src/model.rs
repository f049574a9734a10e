//! Domain types and numeric primitives shared by every fitting routine:
//! weighted cytograms, mixture parameters, time kernels, the multivariate
//! normal log-density and the weighted mixture log-likelihood.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Relative size of the covariance ridge, as a fraction of `trace / d`.
pub const RIDGE_RELATIVE: f64 = 1e-6;
/// Absolute floor on the ridge so that an all-zero scatter still becomes PD.
pub const RIDGE_FLOOR: f64 = 1e-10;

/// One time point's weighted point cloud.
///
/// Points are stored row-major, `len() * dim()` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Cytogram {
    time: f64,
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Cytogram {
    pub fn new(time: f64, dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("cytogram dimension must be positive"));
        }
        if !time.is_finite() {
            return Err(Error::invalid(format!("non-finite timestamp {time}")));
        }
        if points.len() != weights.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} coordinates for {} weights in dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if weights.is_empty() {
            return Err(Error::invalid(format!("cytogram at time {time} is empty")));
        }
        if let Some(i) = points.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite coordinate in point {} at time {time}",
                i / dim
            )));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid(format!(
                "weight {} of point {i} at time {time} is not a finite nonnegative number",
                weights[i]
            )));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::invalid(format!(
                "cytogram at time {time} has no positive weight"
            )));
        }
        Ok(Self {
            time,
            dim,
            points,
            weights,
        })
    }

    /// Unit weights, for particle-level data.
    pub fn unweighted(time: f64, dim: usize, points: Vec<f64>) -> Result<Self> {
        let n = points.len().checked_div(dim).unwrap_or(0);
        Self::new(time, dim, points, vec![1.0; n])
    }

    pub fn from_rows(time: f64, rows: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch("ragged point rows".into()));
        }
        Self::new(time, dim, rows.concat(), weights)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn raw_points(&self) -> &[f64] {
        &self.points
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `n_t`, the total weight (biomass) of the cytogram.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn with_time(&self, time: f64) -> Self {
        Self {
            time,
            ..self.clone()
        }
    }
}

/// Time-ordered sequence of cytograms sharing one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct CytoSeries {
    cytograms: Vec<Cytogram>,
    dim: usize,
}

impl CytoSeries {
    pub fn new(cytograms: Vec<Cytogram>) -> Result<Self> {
        let dim = match cytograms.first() {
            Some(c) => c.dim(),
            None => return Err(Error::invalid("series has no cytograms")),
        };
        for (t, c) in cytograms.iter().enumerate() {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "cytogram {t} has dimension {} but the series has {dim}",
                    c.dim()
                )));
            }
        }
        for w in cytograms.windows(2) {
            if !(w[1].time() > w[0].time()) {
                return Err(Error::invalid(format!(
                    "timestamps must be strictly increasing ({} then {})",
                    w[0].time(),
                    w[1].time()
                )));
            }
        }
        Ok(Self { cytograms, dim })
    }

    pub fn len(&self) -> usize {
        self.cytograms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cytograms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, t: usize) -> &Cytogram {
        &self.cytograms[t]
    }

    pub fn cytograms(&self) -> &[Cytogram] {
        &self.cytograms
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Cytogram> {
        self.cytograms.iter()
    }

    pub fn times(&self) -> Vec<f64> {
        self.cytograms.iter().map(Cytogram::time).collect()
    }

    /// Total number of bins with positive weight across all times.
    pub fn effective_points(&self) -> usize {
        self.cytograms
            .iter()
            .map(|c| c.weights().iter().filter(|w| **w > 0.0).count())
            .sum()
    }

    /// Sub-series at the given (increasing) time indices.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&t| self.cytograms[t].clone()).collect())
    }

    /// The same data with every timestamp shifted by `offset`.
    pub fn shifted(&self, offset: f64) -> Result<Self> {
        Self::new(
            self.cytograms
                .iter()
                .map(|c| c.with_time(c.time() + offset))
                .collect(),
        )
    }

    /// Concatenate every cytogram into one, keeping bin order.
    pub fn pooled(&self, time: f64) -> Result<Cytogram> {
        let points = self
            .cytograms
            .iter()
            .flat_map(|c| c.raw_points().iter().copied())
            .collect();
        let weights = self
            .cytograms
            .iter()
            .flat_map(|c| c.weights().iter().copied())
            .collect();
        Cytogram::new(time, self.dim, points, weights)
    }
}

/// Mixture parameters at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureState {
    pub pi: Vec<f64>,
    pub mu: Vec<DVector<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
}

impl MixtureState {
    pub fn new(pi: Vec<f64>, mu: Vec<DVector<f64>>, sigma: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = pi.len();
        if k == 0 || mu.len() != k || sigma.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "mixture with {} weights, {} means, {} covariances",
                k,
                mu.len(),
                sigma.len()
            )));
        }
        let d = mu[0].len();
        if mu.iter().any(|m| m.len() != d) || sigma.iter().any(|s| s.shape() != (d, d)) {
            return Err(Error::DimensionMismatch("inconsistent component dimensions".into()));
        }
        if pi.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("mixture weights must lie in [0, 1]"));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("mixture weights sum to {total}")));
        }
        for (kk, s) in sigma.iter().enumerate() {
            if (s - s.transpose()).amax() > 1e-10 * (1.0 + s.amax()) {
                return Err(Error::invalid(format!("covariance {kk} is not symmetric")));
            }
            if s.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite {
                    time_index: None,
                    cluster: Some(kk),
                });
            }
        }
        Ok(Self { pi, mu, sigma })
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn dim(&self) -> usize {
        self.mu[0].len()
    }

    /// Relabel components so that new component `j` is old component `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            pi: perm.iter().map(|&k| self.pi[k]).collect(),
            mu: perm.iter().map(|&k| self.mu[k].clone()).collect(),
            sigma: perm.iter().map(|&k| self.sigma[k].clone()).collect(),
        }
    }

    /// Factorize every component; fails with the offending cluster index.
    pub fn components(&self) -> Result<Vec<Gaussian>> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .enumerate()
            .map(|(k, (m, s))| {
                Gaussian::new(m, s).map_err(|_| Error::NotPositiveDefinite {
                    time_index: None,
                    cluster: Some(k),
                })
            })
            .collect()
    }
}

/// Mixture parameters on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamsSeries {
    times: Vec<f64>,
    states: Vec<MixtureState>,
}

impl ParamsSeries {
    pub fn new(times: Vec<f64>, states: Vec<MixtureState>) -> Result<Self> {
        if times.len() != states.len() || states.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} times for {} states",
                times.len(),
                states.len()
            )));
        }
        let (k, d) = (states[0].k(), states[0].dim());
        if states.iter().any(|s| s.k() != k || s.dim() != d) {
            return Err(Error::DimensionMismatch(
                "states disagree on cluster count or dimension".into(),
            ));
        }
        Ok(Self { times, states })
    }

    /// Replicate one state at every time.
    pub fn constant(times: Vec<f64>, state: MixtureState) -> Self {
        let states = vec![state; times.len()];
        Self { times, states }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[MixtureState] {
        &self.states
    }

    pub fn state(&self, t: usize) -> &MixtureState {
        &self.states[t]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn k(&self) -> usize {
        self.states[0].k()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            times: indices.iter().map(|&t| self.times[t]).collect(),
            states: indices.iter().map(|&t| self.states[t].clone()).collect(),
        }
    }

    pub fn with_times(&self, times: Vec<f64>) -> Result<Self> {
        Self::new(times, self.states.clone())
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            times: self.times.clone(),
            states: self.states.iter().map(|s| s.permuted(perm)).collect(),
        }
    }

    pub(crate) fn check_aligned(&self, series: &CytoSeries) -> Result<()> {
        if self.len() != series.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameter states for {} cytograms",
                self.len(),
                series.len()
            )));
        }
        if self.dim() != series.dim() {
            return Err(Error::DimensionMismatch(format!(
                "parameters in dimension {} for data in dimension {}",
                self.dim(),
                series.dim()
            )));
        }
        Ok(())
    }

    /// Index of the stored time nearest to `t` (earlier time wins ties).
    pub fn nearest_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

/// Soft assignments for every point of a series.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities {
    k: usize,
    /// Per time, row-major `n_t x K`.
    gamma: Vec<Vec<f64>>,
    /// `T x K` matrix of `n̂_sk = Σ_i C_i γ_isk`.
    cluster_mass: Vec<Vec<f64>>,
}

impl Responsibilities {
    /// Build from per-time gamma rows, recomputing the cluster masses.
    pub fn from_gamma(series: &CytoSeries, k: usize, gamma: Vec<Vec<f64>>) -> Result<Self> {
        if gamma.len() != series.len() {
            return Err(Error::DimensionMismatch("gamma has wrong number of times".into()));
        }
        let mut cluster_mass = Vec::with_capacity(series.len());
        for (c, g) in series.iter().zip(&gamma) {
            if g.len() != c.len() * k {
                return Err(Error::DimensionMismatch(
                    "gamma row count differs from point count".into(),
                ));
            }
            let mut mass = vec![0.0; k];
            for (i, row) in g.chunks_exact(k).enumerate() {
                let w = c.weight(i);
                for (m, r) in mass.iter_mut().zip(row) {
                    *m += w * r;
                }
            }
            cluster_mass.push(mass);
        }
        Ok(Self {
            k,
            gamma,
            cluster_mass,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn gamma(&self, t: usize) -> &[f64] {
        &self.gamma[t]
    }

    pub fn row(&self, t: usize, i: usize) -> &[f64] {
        &self.gamma[t][i * self.k..(i + 1) * self.k]
    }

    pub fn cluster_mass(&self) -> &[Vec<f64>] {
        &self.cluster_mass
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            k: self.k,
            gamma: indices.iter().map(|&t| self.gamma[t].clone()).collect(),
            cluster_mass: indices.iter().map(|&t| self.cluster_mass[t].clone()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Gaussian,
    Boxcar,
}

/// Unnormalized time kernel `w_h` with `w_h(0) = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
    /// Multiple of the bandwidth beyond which the weight is exactly zero.
    pub cutoff: f64,
}

impl KernelSpec {
    pub const DEFAULT_CUTOFF: f64 = 4.0;

    pub fn new(family: KernelFamily, bandwidth: f64, cutoff: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!("bandwidth {bandwidth} must be positive")));
        }
        if !(cutoff >= 1.0) {
            return Err(Error::invalid(format!("kernel cutoff {cutoff} must be at least 1")));
        }
        Ok(Self {
            family,
            bandwidth,
            cutoff,
        })
    }

    pub fn gaussian(bandwidth: f64) -> Self {
        Self {
            family: KernelFamily::Gaussian,
            bandwidth,
            cutoff: Self::DEFAULT_CUTOFF,
        }
    }

    /// Indicator of `|delta| <= h`.
    pub fn boxcar(bandwidth: f64) -> Self {
        Self {
            family: KernelFamily::Boxcar,
            bandwidth,
            cutoff: Self::DEFAULT_CUTOFF,
        }
    }

    pub fn with_cutoff(self, cutoff: f64) -> Self {
        Self { cutoff, ..self }
    }

    pub fn with_bandwidth(self, bandwidth: f64) -> Self {
        Self { bandwidth, ..self }
    }

    /// Half-width of the support.
    pub fn reach(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => self.cutoff * self.bandwidth,
            KernelFamily::Boxcar => self.bandwidth,
        }
    }

    pub fn weight(&self, delta: f64) -> f64 {
        let a = delta.abs();
        if a > self.reach() {
            return 0.0;
        }
        match self.family {
            KernelFamily::Gaussian => {
                let z = a / self.bandwidth;
                (-0.5 * z * z).exp()
            }
            KernelFamily::Boxcar => 1.0,
        }
    }
}

/// Free-function form of [`KernelSpec::weight`].
pub fn kernel_weight(spec: &KernelSpec, delta: f64) -> f64 {
    spec.weight(delta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub h_pi: f64,
    pub h_mu: f64,
    pub h_sigma: f64,
}

impl Bandwidths {
    pub fn new(h_pi: f64, h_mu: f64, h_sigma: f64) -> Result<Self> {
        for (name, h) in [("h_pi", h_pi), ("h_mu", h_mu), ("h_sigma", h_sigma)] {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid(format!("{name} = {h} must be positive and finite")));
            }
        }
        Ok(Self { h_pi, h_mu, h_sigma })
    }

    pub fn uniform(h: f64) -> Self {
        Self {
            h_pi: h,
            h_mu: h,
            h_sigma: h,
        }
    }
}

/// Degeneracies handled during a fit. Recorded rather than raised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitEvent {
    /// A ridge `epsilon * I` was added to a covariance.
    Ridge {
        time_index: usize,
        cluster: usize,
        epsilon: f64,
    },
    /// A cluster's smoothed mass vanished; its mean and covariance were held.
    VanishedCluster { time: f64, cluster: usize },
    /// Every component density underflowed for a point; uniform responsibilities used.
    Underflow { time_index: usize, point: usize },
    /// A classical-EM component lost all mass and was reseeded.
    EmptyCluster { iteration: usize, cluster: usize },
    /// Parameters from the previous time were carried forward.
    CarriedForward {
        time_index: usize,
        cluster: Option<usize>,
        reason: String,
    },
}

/// Symmetrize `sigma` and, if its smallest eigenvalue is below
/// `max(RIDGE_RELATIVE * trace / d, RIDGE_FLOOR)`, add a ridge.
/// Returns the ridge added, if any.
pub fn regularize_covariance(sigma: &mut DMatrix<f64>) -> Option<f64> {
    let d = sigma.nrows();
    let sym = (&*sigma + sigma.transpose()) * 0.5;
    *sigma = sym;
    let eps = (RIDGE_RELATIVE * sigma.trace() / d as f64).max(RIDGE_FLOOR);
    let min_eig = if d == 1 {
        sigma[(0, 0)]
    } else {
        sigma.clone().symmetric_eigen().eigenvalues.min()
    };
    if min_eig.is_nan() {
        return None;
    }
    if min_eig < eps {
        let ridge = eps + (-min_eig).max(0.0);
        for i in 0..d {
            sigma[(i, i)] += ridge;
        }
        Some(ridge)
    } else {
        None
    }
}

/// A multivariate normal with its Cholesky factor precomputed.
#[derive(Clone, Debug)]
pub struct Gaussian {
    mean: Vec<f64>,
    /// Lower-triangular factor, row-major.
    chol: Vec<f64>,
    log_norm: f64,
    dim: usize,
}

impl Gaussian {
    pub fn new(mean: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if sigma.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "mean of length {d} with covariance {:?}",
                sigma.shape()
            )));
        }
        let not_pd = Error::NotPositiveDefinite {
            time_index: None,
            cluster: None,
        };
        if !sigma.iter().all(|x| x.is_finite()) {
            return Err(not_pd);
        }
        let l = sigma.clone().cholesky().ok_or(not_pd)?.l();
        let mut chol = vec![0.0; d * d];
        let mut log_det_half = 0.0;
        for i in 0..d {
            for j in 0..=i {
                chol[i * d + j] = l[(i, j)];
            }
            log_det_half += l[(i, i)].ln();
        }
        if !log_det_half.is_finite() {
            return Err(Error::NotPositiveDefinite {
                time_index: None,
                cluster: None,
            });
        }
        Ok(Self {
            mean: mean.iter().copied().collect(),
            chol,
            log_norm: -0.5 * d as f64 * LN_2PI - log_det_half,
            dim: d,
        })
    }

    pub fn log_density(&self, y: &[f64]) -> f64 {
        let d = self.dim;
        let mut z: SmallVec<[f64; 8]> = SmallVec::with_capacity(d);
        let mut quad = 0.0;
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i];
            let mut r = y[i] - self.mean[i];
            for (lij, zj) in row.iter().zip(&z) {
                r -= lij * zj;
            }
            let zi = r / self.chol[i * d + i];
            quad += zi * zi;
            z.push(zi);
        }
        self.log_norm - 0.5 * quad
    }
}

/// `log φ(y; mu, sigma)` through a Cholesky factorization.
pub fn mvn_logpdf(y: &[f64], mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if y.len() != mu.len() {
        return Err(Error::DimensionMismatch(format!(
            "point of length {} for mean of length {}",
            y.len(),
            mu.len()
        )));
    }
    Ok(Gaussian::new(mu, sigma)?.log_density(y))
}

/// Numerically stable `log Σ exp(x_i)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Per-point log of `π_k φ_k(y)` for every component.
pub(crate) fn component_log_terms(
    log_pi: &[f64],
    comps: &[Gaussian],
    y: &[f64],
    out: &mut [f64],
) {
    for ((o, lp), g) in out.iter_mut().zip(log_pi).zip(comps) {
        *o = if *lp == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            lp + g.log_density(y)
        };
    }
}

/// `Σ_i C_i log Σ_k π_k φ(Y_i; μ_k, Σ_k)` for one cytogram.
pub fn cytogram_loglik(cyto: &Cytogram, state: &MixtureState) -> Result<f64> {
    if state.dim() != cyto.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state dimension {} for cytogram dimension {}",
            state.dim(),
            cyto.dim()
        )));
    }
    let comps = state.components()?;
    let log_pi: Vec<f64> = state.pi.iter().map(|p| p.ln()).collect();
    let mut terms = vec![0.0; state.k()];
    let mut total = 0.0;
    for (i, y) in cyto.points().enumerate() {
        let w = cyto.weight(i);
        if w == 0.0 {
            continue;
        }
        component_log_terms(&log_pi, &comps, y, &mut terms);
        total += w * log_sum_exp(&terms);
    }
    Ok(total)
}

/// Per-time weighted log-likelihood terms.
pub fn loglik_per_time(series: &CytoSeries, params: &ParamsSeries) -> Result<Vec<f64>> {
    params.check_aligned(series)?;
    series
        .cytograms()
        .par_iter()
        .zip(params.states().par_iter())
        .enumerate()
        .map(|(t, (c, s))| cytogram_loglik(c, s).map_err(|e| e.at_time(t)))
        .collect()
}

/// Weighted log-likelihood of a whole series; terms summed in time order.
pub fn weighted_loglik(series: &CytoSeries, params: &ParamsSeries) -> Result<f64> {
    Ok(loglik_per_time(series, params)?.iter().sum())
}

impl Error {
    pub(crate) fn at_time(self, time_index: usize) -> Self {
        match self {
            Error::NotPositiveDefinite { cluster, .. } => Error::NotPositiveDefinite {
                time_index: Some(time_index),
                cluster,
            },
            other => other,
        }
    }
}

/// Weighted mean and MLE covariance (about that mean) of a cytogram.
pub fn weighted_moments(cyto: &Cytogram) -> (DVector<f64>, DMatrix<f64>) {
    let d = cyto.dim();
    let total = cyto.total_weight();
    let mut mean = DVector::zeros(d);
    for (i, y) in cyto.points().enumerate() {
        let w = cyto.weight(i);
        for j in 0..d {
            mean[j] += w * y[j];
        }
    }
    mean /= total;
    let mut cov = DMatrix::zeros(d, d);
    for (i, y) in cyto.points().enumerate() {
        let w = cyto.weight(i);
        for a in 0..d {
            let ra = y[a] - mean[a];
            for b in 0..d {
                cov[(a, b)] += w * ra * (y[b] - mean[b]);
            }
        }
    }
    cov /= total;
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eye(d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d)
    }

    #[test]
    fn gaussian_kernel_values() {
        let k = KernelSpec::gaussian(2.0);
        assert_eq!(k.weight(0.0), 1.0);
        assert_relative_eq!(k.weight(2.0), (-0.5f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(k.weight(2.0), 0.606_530_659_712_633, max_relative = 1e-12);
        assert_eq!(k.weight(9.0), 0.0);
        assert_eq!(k.weight(-1.3), k.weight(1.3));
    }

    #[test]
    fn boxcar_kernel_support() {
        let k = KernelSpec::boxcar(1.5);
        assert_eq!(k.weight(1.5), 1.0);
        assert_eq!(k.weight(-1.5), 1.0);
        assert_eq!(k.weight(1.5000001), 0.0);
    }

    #[test]
    fn kernel_spec_rejects_bad_parameters() {
        assert!(KernelSpec::new(KernelFamily::Gaussian, 0.0, 4.0).is_err());
        assert!(KernelSpec::new(KernelFamily::Gaussian, 1.0, 0.5).is_err());
        assert!(KernelSpec::new(KernelFamily::Boxcar, 1.0, 1.0).is_ok());
    }

    #[test]
    fn cutoff_truncation_is_negligible() {
        // The dropped mass is the two-sided normal tail beyond `cutoff`:
        // about 6.3e-5 at 4 and 5.7e-7 at 5.
        let full = KernelSpec::gaussian(3.0).with_cutoff(1e6);
        let grid: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.25).collect();
        let a: f64 = grid.iter().map(|d| full.weight(*d)).sum();
        for (cutoff, bound) in [(4.0, 7e-5), (5.0, 1e-6), (6.0, 1e-8)] {
            let cut = KernelSpec::gaussian(3.0).with_cutoff(cutoff);
            let b: f64 = grid.iter().map(|d| cut.weight(*d)).sum();
            assert!((a - b).abs() < bound * a, "cutoff {cutoff}");
        }
    }

    #[test]
    fn standard_normal_logpdf() {
        let v = mvn_logpdf(&[0.0], &DVector::from_vec(vec![0.0]), &eye(1)).unwrap();
        assert_relative_eq!(v, -0.5 * LN_2PI, max_relative = 1e-14);
        assert_relative_eq!(v, -0.918_938_533_204_672_7, max_relative = 1e-12);
        let mu = DVector::from_vec(vec![0.3, -2.0, 7.5]);
        let v = mvn_logpdf(mu.as_slice(), &mu, &eye(3)).unwrap();
        assert_relative_eq!(v, -1.5 * LN_2PI, max_relative = 1e-14);
    }

    #[test]
    fn diagonal_logpdf_by_hand() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let v = mvn_logpdf(&[1.0, 0.0], &DVector::zeros(2), &sigma).unwrap();
        let expected = -LN_2PI - 0.5 * 4f64.ln() - 1.0 / 8.0;
        assert_relative_eq!(v, expected, max_relative = 1e-13);
    }

    #[test]
    fn logpdf_rejects_non_pd() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = mvn_logpdf(&[0.0, 0.0], &DVector::zeros(2), &sigma).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn logpdf_permutation_invariant() {
        let sigma = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let mu = DVector::from_vec(vec![0.1, 0.2, -0.4]);
        let y = [1.0, -0.5, 0.25];
        let perm = [2usize, 0, 1];
        let sp = DMatrix::from_fn(3, 3, |i, j| sigma[(perm[i], perm[j])]);
        let mp = DVector::from_fn(3, |i, _| mu[perm[i]]);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let a = mvn_logpdf(&y, &mu, &sigma).unwrap();
        let b = mvn_logpdf(&yp, &mp, &sp).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    fn one_point_series(y: f64, w: f64) -> CytoSeries {
        CytoSeries::new(vec![Cytogram::new(0.0, 1, vec![y], vec![w]).unwrap()]).unwrap()
    }

    fn unit_params(times: Vec<f64>) -> ParamsSeries {
        let st = MixtureState::new(vec![1.0], vec![DVector::zeros(1)], vec![eye(1)]).unwrap();
        ParamsSeries::constant(times, st)
    }

    #[test]
    fn single_term_loglik() {
        let ll = weighted_loglik(&one_point_series(0.0, 1.0), &unit_params(vec![0.0])).unwrap();
        assert_relative_eq!(ll, -0.918_938_533_204_672_7, max_relative = 1e-12);
        let ll2 = weighted_loglik(&one_point_series(0.0, 2.0), &unit_params(vec![0.0])).unwrap();
        assert_relative_eq!(ll2, 2.0 * ll, max_relative = 1e-15);
    }

    #[test]
    fn loglik_matches_naive_sum() {
        // T=2, n=3, K=2, hand-built densities without log-sum-exp.
        let c0 = Cytogram::new(0.0, 1, vec![-1.0, 0.2, 1.4], vec![1.0, 2.0, 0.5]).unwrap();
        let c1 = Cytogram::new(1.0, 1, vec![0.0, 2.0, -0.7], vec![1.5, 1.0, 3.0]).unwrap();
        let series = CytoSeries::new(vec![c0, c1]).unwrap();
        let mk = |p: f64, m0: f64, m1: f64, v0: f64, v1: f64| {
            MixtureState::new(
                vec![p, 1.0 - p],
                vec![DVector::from_vec(vec![m0]), DVector::from_vec(vec![m1])],
                vec![DMatrix::from_element(1, 1, v0), DMatrix::from_element(1, 1, v1)],
            )
            .unwrap()
        };
        let states = vec![mk(0.3, -1.0, 1.0, 0.5, 2.0), mk(0.6, 0.5, 1.5, 1.0, 0.25)];
        let params = ParamsSeries::new(vec![0.0, 1.0], states.clone()).unwrap();
        let phi = |y: f64, m: f64, v: f64| {
            (-(y - m) * (y - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
        };
        let mut naive = 0.0;
        for (c, s) in series.iter().zip(&states) {
            for i in 0..c.len() {
                let y = c.point(i)[0];
                let dens: f64 = (0..2)
                    .map(|k| s.pi[k] * phi(y, s.mu[k][0], s.sigma[k][(0, 0)]))
                    .sum();
                naive += c.weight(i) * dens.ln();
            }
        }
        let ll = weighted_loglik(&series, &params).unwrap();
        assert_relative_eq!(ll, naive, max_relative = 1e-9);
    }

    #[test]
    fn loglik_rejects_misaligned_params() {
        let series = one_point_series(0.0, 1.0);
        assert!(weighted_loglik(&series, &unit_params(vec![0.0, 1.0])).is_err());
    }

    #[test]
    fn series_validation() {
        let a = Cytogram::unweighted(1.0, 1, vec![0.0]).unwrap();
        let b = Cytogram::unweighted(0.5, 1, vec![0.0]).unwrap();
        assert!(CytoSeries::new(vec![a.clone(), b]).is_err());
        assert!(Cytogram::new(0.0, 1, vec![f64::NAN], vec![1.0]).is_err());
        assert!(Cytogram::new(0.0, 1, vec![1.0], vec![-1.0]).is_err());
        assert!(Cytogram::new(0.0, 1, vec![1.0], vec![0.0]).is_err());
        let c = Cytogram::unweighted(2.0, 2, vec![0.0, 1.0]).unwrap();
        assert!(CytoSeries::new(vec![a, c]).is_err());
    }

    #[test]
    fn ridge_makes_zero_matrix_pd() {
        let mut s = DMatrix::zeros(2, 2);
        let eps = regularize_covariance(&mut s).unwrap();
        assert_eq!(eps, RIDGE_FLOOR);
        assert!(s.clone().cholesky().is_some());

        let mut well = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!(regularize_covariance(&mut well).is_none());
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_relative_eq!(log_sum_exp(&[-1000.0, -1000.0]), -1000.0 + 2f64.ln());
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
