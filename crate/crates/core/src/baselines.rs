//! Comparison methods: one mixture fitted to the pooled series, and
//! independent per-time mixtures chained together by minimum-cost matching.

use crate::error::{Error, Result};
use crate::init::{standard_em, standard_em_from, EmOptions};
use crate::kem::{e_step, FitResult};
use crate::model::{loglik_per_time, CytoSeries, FitEvent, MixtureState, ParamsSeries};

/// A perfect matching of rows to columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `perm[row]` is the column assigned to `row`.
    pub perm: Vec<usize>,
    pub cost: f64,
}

/// Minimum-cost perfect matching of a square cost matrix (Hungarian method
/// with row/column potentials, O(n³)).
pub fn hungarian_solve(cost: &[Vec<f64>]) -> Result<Assignment> {
    let n = cost.len();
    if cost.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("cost matrix must be square"));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::invalid("cost matrix entries must be finite"));
    }
    if n == 0 {
        return Ok(Assignment {
            perm: Vec::new(),
            cost: 0.0,
        });
    }
    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    let total = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok(Assignment { perm, cost: total })
}

/// One mixture for the pooled data, replicated at every time.
pub fn constant_fit(series: &CytoSeries, k: usize, options: &EmOptions) -> Result<FitResult> {
    let pooled = series.pooled(series.get(0).time())?;
    let em = standard_em(&pooled, k, options)?;
    let params = ParamsSeries::constant(series.times(), em.state);
    let resp = e_step(series, &params)?;
    let ll: f64 = loglik_per_time(series, &params)?.iter().sum();
    Ok(FitResult {
        params,
        resp,
        loglik_trace: vec![ll],
        events: em.events,
        iterations: em.iterations,
        converged: em.iterations < options.max_iters,
    })
}

fn mean_cost(current: &MixtureState, reference: &MixtureState) -> Vec<Vec<f64>> {
    current
        .mu
        .iter()
        .map(|a| reference.mu.iter().map(|b| (a - b).norm_squared()).collect())
        .collect()
}

/// Independent classical EM at each time, warm-started from the previous
/// time's matched solution, with labels aligned to that solution by
/// squared-distance matching of the means.
pub fn hungarian_fit(series: &CytoSeries, k: usize, options: &EmOptions) -> Result<FitResult> {
    let first = standard_em(series.get(0), k, options)?;
    let mut events = first.events;
    let mut states = vec![first.state];
    for t in 1..series.len() {
        let cyto = series.get(t);
        let prev = &states[t - 1];
        let per_time = EmOptions {
            seed: options.seed.wrapping_add(t as u64),
            ..*options
        };
        let fitted = standard_em_from(cyto, prev, &per_time)
            .or_else(|_| standard_em(cyto, k, &per_time));
        let state = match fitted {
            Ok(em) => {
                let assignment = hungarian_solve(&mean_cost(&em.state, prev))?;
                // Fitted component j becomes reference label perm[j].
                let mut inverse = vec![0; k];
                for (j, &r) in assignment.perm.iter().enumerate() {
                    inverse[r] = j;
                }
                em.state.permuted(&inverse)
            }
            Err(e) => {
                events.push(FitEvent::CarriedForward {
                    time_index: t,
                    cluster: None,
                    reason: e.to_string(),
                });
                prev.clone()
            }
        };
        states.push(state);
    }
    let params = ParamsSeries::new(series.times(), states)?;
    let resp = e_step(series, &params)?;
    let ll: f64 = loglik_per_time(series, &params)?.iter().sum();
    Ok(FitResult {
        params,
        resp,
        loglik_trace: vec![ll],
        events,
        iterations: series.len(),
        converged: true,
    })
}
