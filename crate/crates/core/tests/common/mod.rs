//! Random inputs and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tvmix_core::{CytoSeries, Cytogram, MixtureState, ParamsSeries};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Blob centres for `k` clusters in `d` dimensions, 4 apart along a ring.
pub fn centres(k: usize, d: usize) -> Vec<DVector<f64>> {
    (0..k)
        .map(|j| {
            let a = std::f64::consts::TAU * j as f64 / k as f64;
            DVector::from_fn(d, |i, _| 3.0 * if i % 2 == 0 { a.cos() } else { a.sin() } + i as f64 * 0.1)
        })
        .collect()
}

/// `t_count` weighted cytograms at times `start + t·spacing`, points drawn
/// around [`centres`] with a slow drift.
pub fn random_series(
    seed: u64,
    t_count: usize,
    n: usize,
    d: usize,
    k: usize,
    start: f64,
    spacing: f64,
) -> CytoSeries {
    let mut r = rng(seed);
    let base = centres(k, d);
    let cytos = (0..t_count)
        .map(|t| {
            let drift = 0.3 * (t as f64 / t_count as f64);
            let mut points = Vec::with_capacity(n * d);
            let mut weights = Vec::with_capacity(n);
            for _ in 0..n {
                let z = r.random_range(0..k);
                for i in 0..d {
                    let e: f64 = StandardNormal.sample(&mut r);
                    points.push(base[z][i] + drift + 0.7 * e);
                }
                weights.push(r.random_range(0.5..2.0));
            }
            Cytogram::new(start + t as f64 * spacing, d, points, weights).unwrap()
        })
        .collect();
    CytoSeries::new(cytos).unwrap()
}

/// Random mixture near the blob centres.
pub fn random_state(r: &mut ChaCha8Rng, k: usize, d: usize) -> MixtureState {
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let pi = raw.iter().map(|p| p / total).collect();
    let mu = centres(k, d)
        .into_iter()
        .map(|c| c.map(|x| x + r.random_range(-0.8..0.8)))
        .collect();
    let sigma = (0..k)
        .map(|_| {
            let a = DMatrix::from_fn(d, d, |_, _| r.random_range(-0.4..0.4));
            &a * a.transpose() + DMatrix::identity(d, d) * r.random_range(0.3..1.5)
        })
        .collect();
    MixtureState::new(pi, mu, sigma).unwrap()
}

/// Independent random state at every time of `series`.
pub fn random_params(r: &mut ChaCha8Rng, series: &CytoSeries, k: usize) -> ParamsSeries {
    let states = (0..series.len()).map(|_| random_state(r, k, series.dim())).collect();
    ParamsSeries::new(series.times(), states).unwrap()
}

/// Gaussian density from the explicit inverse and determinant.
pub fn naive_density(y: &[f64], mu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let d = mu.len();
    let r = DVector::from_column_slice(y) - mu;
    let inv = sigma.clone().try_inverse().unwrap();
    let q = (r.transpose() * inv * &r)[(0, 0)];
    (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powi(d as i32) * sigma.determinant()).sqrt()
}

/// Responsibilities by direct division of densities.
pub fn naive_gamma(cyto: &Cytogram, state: &MixtureState) -> Vec<Vec<f64>> {
    cyto.points()
        .map(|y| {
            let dens: Vec<f64> = (0..state.k())
                .map(|j| state.pi[j] * naive_density(y, &state.mu[j], &state.sigma[j]))
                .collect();
            let total: f64 = dens.iter().sum();
            dens.iter().map(|p| p / total).collect()
        })
        .collect()
}

/// Weighted sufficient statistics of one cytogram under `state`.
struct Stats {
    mass: Vec<f64>,
    total: f64,
    sums: Vec<DVector<f64>>,
}

fn stats(cytos: &[(&Cytogram, &MixtureState)], k: usize, d: usize) -> Stats {
    let mut s = Stats {
        mass: vec![0.0; k],
        total: 0.0,
        sums: vec![DVector::zeros(d); k],
    };
    for (c, state) in cytos {
        let g = naive_gamma(c, state);
        for (i, y) in c.points().enumerate() {
            let w = c.weight(i);
            s.total += w;
            for j in 0..k {
                s.mass[j] += w * g[i][j];
                s.sums[j] += DVector::from_column_slice(y) * (w * g[i][j]);
            }
        }
    }
    s
}

/// One classical EM update pooling every `(cytogram, state)` pair, with each
/// cytogram's responsibilities taken from its own state.
pub fn pooled_em_update(cytos: &[(&Cytogram, &MixtureState)]) -> MixtureState {
    let k = cytos[0].1.k();
    let d = cytos[0].0.dim();
    let s = stats(cytos, k, d);
    let mu: Vec<DVector<f64>> = (0..k).map(|j| &s.sums[j] / s.mass[j]).collect();
    let mut sigma = vec![DMatrix::zeros(d, d); k];
    for (c, state) in cytos {
        let g = naive_gamma(c, state);
        for (i, y) in c.points().enumerate() {
            for j in 0..k {
                let r = DVector::from_column_slice(y) - &mu[j];
                sigma[j] += &r * r.transpose() * (c.weight(i) * g[i][j]);
            }
        }
    }
    for j in 0..k {
        sigma[j] /= s.mass[j];
    }
    MixtureState {
        pi: s.mass.iter().map(|m| m / s.total).collect(),
        mu,
        sigma,
    }
}

pub fn em_update(cyto: &Cytogram, state: &MixtureState) -> MixtureState {
    pooled_em_update(&[(cyto, state)])
}

/// Largest absolute elementwise difference between two states.
pub fn state_diff(a: &MixtureState, b: &MixtureState) -> f64 {
    let mut m: f64 = 0.0;
    for j in 0..a.k() {
        m = m.max((a.pi[j] - b.pi[j]).abs());
        m = m.max((&a.mu[j] - &b.mu[j]).amax());
        m = m.max((&a.sigma[j] - &b.sigma[j]).amax());
    }
    m
}

pub fn params_diff(a: &ParamsSeries, b: &ParamsSeries) -> f64 {
    a.states()
        .iter()
        .zip(b.states())
        .map(|(x, y)| state_diff(x, y))
        .fold(0.0, f64::max)
}

/// Pair-counting Rand index, O(n²).
pub fn naive_rand(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let mut agree = 0usize;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1;
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    if pairs == 0 {
        1.0
    } else {
        agree as f64 / pairs as f64
    }
}

/// Every permutation of `0..n`, by Heap's algorithm.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            let j = if k.is_multiple_of(2) { i } else { 0 };
            a.swap(j, k - 1);
        }
    }
    let mut out = Vec::new();
    heap(n, &mut (0..n).collect(), &mut out);
    out
}

pub fn brute_force_cost(cost: &[Vec<f64>]) -> f64 {
    permutations(cost.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}
