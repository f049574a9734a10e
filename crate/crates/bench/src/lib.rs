//! Synthetic inputs shared by the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tvmix_core::{CytoSeries, Cytogram, Result};

/// `t_count` cytograms of `n` weighted points in `dim` dimensions drawn from
/// `k` slowly rotating, well separated Gaussian clusters.
pub fn drifting_series(t_count: usize, n: usize, dim: usize, k: usize, seed: u64) -> Result<CytoSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).expect("valid sd");
    let mut cytos = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let phase = t as f64 / t_count.max(1) as f64;
        let mut points = Vec::with_capacity(n * dim);
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            let z = rng.random_range(0..k);
            let angle = std::f64::consts::TAU * (z as f64 / k as f64 + 0.1 * phase);
            for j in 0..dim {
                let centre = 4.0 * if j % 2 == 0 { angle.cos() } else { angle.sin() };
                points.push(centre + noise.sample(&mut rng));
            }
            weights.push(rng.random_range(0.5..2.0));
        }
        cytos.push(Cytogram::new(t as f64, dim, points, weights)?);
    }
    CytoSeries::new(cytos)
}

/// Square matrix of uniform costs in `[0, 100)`.
pub fn random_costs(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..n).map(|_| rng.random_range(0.0..100.0)).collect()).collect()
}
