mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use tvmix_core::model::log_sum_exp;
use tvmix_core::{
    e_step, fit, hungarian_solve, make_folds, mvn_logpdf, rand_index, Bandwidths, FitConfig, FitResult, KernelSpec,
    Smoother,
};

#[derive(Clone, Debug)]
struct Case {
    seed: u64,
    t_count: usize,
    n: usize,
    d: usize,
    k: usize,
    h: f64,
    boxcar: bool,
}

fn cases() -> impl Strategy<Value = Case> {
    (any::<u64>(), 2usize..7, 6usize..16, 1usize..3, 1usize..4, 0.3f64..6.0, any::<bool>()).prop_map(
        |(seed, t_count, n, d, k, h, boxcar)| Case {
            seed,
            t_count,
            n,
            d,
            k,
            h,
            boxcar,
        },
    )
}

fn config(c: &Case) -> FitConfig {
    let bw = Bandwidths::uniform(c.h);
    let mut cfg = FitConfig::new(c.k, bw);
    if c.boxcar {
        cfg.smoother = Smoother::boxcar(bw);
    }
    cfg.max_iters = 4;
    cfg
}

fn run(c: &Case, start: f64) -> (tvmix_core::CytoSeries, tvmix_core::ParamsSeries, FitResult) {
    let series = random_series(c.seed, c.t_count, c.n, c.d, c.k, start, 1.0);
    let init = random_params(&mut rng(c.seed ^ 1), &series, c.k);
    let out = fit(&series, &init, &config(c)).unwrap();
    (series, init, out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn responsibilities_and_weights_normalize(c in cases()) {
        let (series, _, out) = run(&c, 0.0);
        for t in 0..series.len() {
            for i in 0..series.get(t).len() {
                let s: f64 = out.resp.row(t, i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-10);
            }
            let p: f64 = out.params.state(t).pi.iter().sum();
            prop_assert!((p - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn covariances_symmetric_and_pd(c in cases()) {
        let (_, _, out) = run(&c, 0.0);
        for state in out.params.states() {
            for s in &state.sigma {
                prop_assert!((s - s.transpose()).amax() < 1e-10);
                prop_assert!(s.clone().symmetric_eigenvalues().min() > 0.0);
            }
        }
    }

    #[test]
    fn relabeling_init_relabels_fit(c in cases(), rot in 0usize..3) {
        let (series, init, out) = run(&c, 0.0);
        let perm: Vec<usize> = (0..c.k).map(|j| (j + rot) % c.k).collect();
        let other = fit(&series, &init.permuted(&perm), &config(&c)).unwrap();
        prop_assert!(params_diff(&other.params, &out.params.permuted(&perm)) < 1e-8);
        prop_assert_eq!(other.iterations, out.iterations);
        for (a, b) in other.loglik_trace.iter().zip(&out.loglik_trace) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn time_shift_leaves_fit_unchanged(c in cases(), offset in -500.0f64..500.0) {
        let (series, init, out) = run(&c, 0.0);
        let shifted = series.shifted(offset).unwrap();
        let init2 = init.with_times(shifted.times()).unwrap();
        let other = fit(&shifted, &init2, &config(&c)).unwrap();
        prop_assert!(params_diff(&other.params, &out.params) < 1e-8);
        prop_assert_eq!(other.iterations, out.iterations);
    }

    #[test]
    fn fit_is_identical_across_thread_counts(c in cases()) {
        let series = random_series(c.seed, c.t_count, c.n, c.d, c.k, 0.0, 1.0);
        let init = random_params(&mut rng(c.seed ^ 1), &series, c.k);
        let cfg = config(&c);
        let in_pool = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| fit(&series, &init, &cfg).unwrap())
        };
        prop_assert_eq!(in_pool(1), in_pool(4));
    }

    #[test]
    fn e_step_matches_direct_division(c in cases()) {
        let series = random_series(c.seed, c.t_count, c.n, c.d, c.k, 0.0, 1.0);
        let params = random_params(&mut rng(c.seed ^ 2), &series, c.k);
        let resp = e_step(&series, &params).unwrap();
        for (t, cyto) in series.iter().enumerate() {
            for (i, row) in naive_gamma(cyto, params.state(t)).iter().enumerate() {
                for (a, b) in resp.row(t, i).iter().zip(row) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn logpdf_coordinate_permutation(seed in any::<u64>(), d in 1usize..5, rot in 0usize..5) {
        let mut r = rng(seed);
        let state = random_state(&mut r, 1, d);
        let y: Vec<f64> = (0..d).map(|i| state.mu[0][i] + (i as f64) - 1.0).collect();
        let p: Vec<usize> = (0..d).map(|i| (i + rot) % d).collect();
        let yp: Vec<f64> = p.iter().map(|&i| y[i]).collect();
        let mp = nalgebra::DVector::from_fn(d, |i, _| state.mu[0][p[i]]);
        let sp = nalgebra::DMatrix::from_fn(d, d, |i, j| state.sigma[0][(p[i], p[j])]);
        let a = mvn_logpdf(&y, &state.mu[0], &state.sigma[0]).unwrap();
        let b = mvn_logpdf(&yp, &mp, &sp).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        let naive = naive_density(&y, &state.mu[0], &state.sigma[0]).ln();
        prop_assert!((a - naive).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn log_sum_exp_matches_naive(xs in prop::collection::vec(-30.0f64..30.0, 1..12)) {
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        prop_assert!((log_sum_exp(&xs) - naive).abs() <= 1e-9 * naive.abs().max(1.0));
        let big: Vec<f64> = xs.iter().map(|x| x + 1000.0).collect();
        prop_assert!((log_sum_exp(&big) - 1000.0 - naive).abs() < 1e-9);
    }

    #[test]
    fn gaussian_cutoff_loses_little_mass(h in 0.2f64..5.0, cutoff in 4.0f64..8.0) {
        let full = KernelSpec::gaussian(h).with_cutoff(1e6);
        let cut = KernelSpec::gaussian(h).with_cutoff(cutoff);
        let grid: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.05).collect();
        let a: f64 = grid.iter().map(|d| full.weight(*d)).sum();
        let b: f64 = grid.iter().map(|d| cut.weight(*d)).sum();
        prop_assert!((a - b) / a < 7e-5);
    }

    #[test]
    fn rand_index_symmetric_and_label_free(a in prop::collection::vec(0usize..4, 2..40), rot in 1usize..4) {
        let mut r = rng(a.len() as u64);
        let b: Vec<usize> = a.iter().map(|_| r.random_range(0..3)).collect();
        let ab = rand_index(&a, &b).unwrap();
        prop_assert_eq!(ab, rand_index(&b, &a).unwrap());
        let relabeled: Vec<usize> = a.iter().map(|z| (z + rot) % 4).collect();
        prop_assert!((rand_index(&relabeled, &b).unwrap() - ab).abs() < 1e-15);
        prop_assert_eq!(rand_index(&a, &relabeled).unwrap(), 1.0);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - naive_rand(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn hungarian_ignores_row_and_column_shifts(seed in any::<u64>(), n in 1usize..6, shift in -50.0f64..50.0, line in 0usize..6) {
        let mut r = rng(seed);
        let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| r.random_range(0.0..10.0)).collect()).collect();
        let base = hungarian_solve(&cost).unwrap();
        prop_assert!((base.cost - brute_force_cost(&cost)).abs() < 1e-9);
        let line = line % n;
        let mut rows = cost.clone();
        rows[line].iter_mut().for_each(|c| *c += shift);
        let mut cols = cost.clone();
        cols.iter_mut().for_each(|row| row[line] += shift);
        prop_assert_eq!(&hungarian_solve(&rows).unwrap().perm, &base.perm);
        prop_assert_eq!(&hungarian_solve(&cols).unwrap().perm, &base.perm);
    }

    #[test]
    fn folds_partition_times(t_count in 1usize..120, n_folds in 2usize..9) {
        let folds = make_folds(t_count, n_folds).unwrap();
        let mut seen = vec![0; t_count];
        let mut sizes = Vec::new();
        for f in 0..n_folds {
            let m = folds.members(f);
            sizes.push(m.len());
            prop_assert!(t_count < 2 || m.len() < t_count);
            for t in m {
                seen[t] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}


