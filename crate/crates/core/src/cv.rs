//! Interleaved-fold cross-validation of the mean and proportion bandwidths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kem::{fit, predict_at_times, FitConfig};
use crate::model::{loglik_per_time, Bandwidths, CytoSeries, ParamsSeries};

/// Interleaved folds: time index `t` (0-based) belongs to fold `t % n_folds`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub n_folds: usize,
    pub fold_of: Vec<usize>,
}

impl FoldSpec {
    /// 0-based time indices held out in fold `fold`.
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&t| self.fold_of[t] == fold)
            .collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&t| self.fold_of[t] != fold)
            .collect()
    }
}

pub fn make_folds(t_count: usize, n_folds: usize) -> Result<FoldSpec> {
    if t_count == 0 {
        return Err(Error::invalid("cannot fold an empty series"));
    }
    if n_folds < 2 {
        return Err(Error::invalid("at least two folds are required"));
    }
    Ok(FoldSpec {
        n_folds,
        fold_of: (0..t_count).map(|t| t % n_folds).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub score: f64,
    /// Held-out loglik per fold, already divided by the fold size.
    pub per_fold: Vec<f64>,
}

/// Cross-validated held-out log-likelihood for one bandwidth triple.
///
/// Every fold fit starts from `init` restricted to the training times.
pub fn cv_score(
    series: &CytoSeries,
    init: &ParamsSeries,
    config: &FitConfig,
    folds: &FoldSpec,
) -> Result<CvScore> {
    if folds.fold_of.len() != series.len() {
        return Err(Error::DimensionMismatch("folds do not cover the series".into()));
    }
    let mut per_fold = Vec::new();
    for fold in 0..folds.n_folds {
        let held = folds.members(fold);
        if held.is_empty() {
            continue;
        }
        let train = folds.training(fold);
        if train.is_empty() {
            return Err(Error::invalid(format!("fold {fold} leaves no training times")));
        }
        let train_series = series.select(&train)?;
        let train_init = init.select(&train);
        let fitted = fit(&train_series, &train_init, config)?;
        let held_series = series.select(&held)?;
        let held_times = held_series.times();
        let (predicted, _) = predict_at_times(&train_series, &fitted, &config.smoother, &held_times)
            .map_err(|e| match e {
                crate::error::Error::ZeroKernelMass { time } => {
                    Error::UnreachableHoldout { time, fold }
                }
                other => other,
            })?;
        let ll: f64 = loglik_per_time(&held_series, &predicted)?.iter().sum();
        per_fold.push(ll / held.len() as f64);
    }
    let score = per_fold.iter().sum::<f64>() / per_fold.len() as f64;
    Ok(CvScore { score, per_fold })
}

/// Candidate values for `h_mu` and `h_pi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub h_mu: Vec<f64>,
    pub h_pi: Vec<f64>,
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

impl GridSpec {
    /// 7 x 7 log grid from one time unit to the series duration.
    pub fn default_for(series: &CytoSeries) -> Self {
        let times = series.times();
        let span = (times[times.len() - 1] - times[0]).max(1.0);
        let values = log_spaced(1.0, span, 7);
        Self {
            h_mu: values.clone(),
            h_pi: values,
        }
    }

    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.h_mu
            .iter()
            .flat_map(|&m| self.h_pi.iter().map(move |&p| (m, p)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub h_mu: f64,
    pub h_pi: f64,
    pub score: Option<f64>,
    pub per_fold: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub h_sigma: f64,
    pub cells: Vec<CvCell>,
    /// Index into `cells` of the best-scoring cell.
    pub best: Option<usize>,
}

impl CvResult {
    pub fn best_cell(&self) -> Option<&CvCell> {
        self.best.map(|i| &self.cells[i])
    }
}

/// Score every `(h_mu, h_pi)` cell with `h_sigma` fixed. Cells that fail are
/// kept with their error and never selected.
pub fn grid_search(
    series: &CytoSeries,
    init: &ParamsSeries,
    base: &FitConfig,
    grid: &GridSpec,
    h_sigma: f64,
    folds: &FoldSpec,
) -> Result<CvResult> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::invalid("bandwidth grid is empty"));
    }
    let scored: Vec<CvCell> = cells
        .par_iter()
        .map(|&(h_mu, h_pi)| {
            let outcome = Bandwidths::new(h_pi, h_mu, h_sigma).and_then(|bw| {
                let mut config = *base;
                config.smoother.bandwidths = bw;
                cv_score(series, init, &config, folds)
            });
            match outcome {
                Ok(s) => CvCell {
                    h_mu,
                    h_pi,
                    score: Some(s.score),
                    per_fold: Some(s.per_fold),
                    error: None,
                },
                Err(e) => CvCell {
                    h_mu,
                    h_pi,
                    score: None,
                    per_fold: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let best = select_best(&scored);
    Ok(CvResult {
        h_sigma,
        cells: scored,
        best,
    })
}

/// Highest finite score; ties go to larger `h_mu`, then larger `h_pi`.
fn select_best(cells: &[CvCell]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        let Some(score) = c.score.filter(|s| s.is_finite()) else {
            continue;
        };
        best = match best {
            None => Some(i),
            Some(b) => {
                let bc = &cells[b];
                let bs = bc.score.unwrap();
                let better = score > bs
                    || (score == bs
                        && (c.h_mu > bc.h_mu || (c.h_mu == bc.h_mu && c.h_pi > bc.h_pi)));
                Some(if better { i } else { b })
            }
        };
    }
    best
}
