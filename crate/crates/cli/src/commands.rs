use std::io::Write;

use anyhow::Context;
use serde_json::json;
use tvmix_core::io::{self, FitDocument, TruthDocument};
use tvmix_core::theory::run_theory_check;
use tvmix_core::{
    e_step, fit as kem_fit, grid_search, initialize, log_spaced, make_folds, run_benchmark, FitEvent, GridSpec,
};

use crate::{RunConfig, UsageError, VerdictFailed};

pub fn fit(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let input = cfg.require_path(&cfg.input, "input")?;
    let output = cfg.require_path(&cfg.output, "output")?;
    let fit_config = cfg.fit_config()?;
    let init_config = cfg.init_config();
    let data = io::load_series(&input)?;

    let (init, init_events) = initialize(&data.series, fit_config.k, &init_config)?;
    let mut result = kem_fit(&data.series, &init, &fit_config)?;
    let mut events: Vec<FitEvent> = init_events;
    events.append(&mut result.events);
    result.events = events;

    let echo = json!({ "fit": fit_config, "init": init_config });
    io::write_fit(&output, &FitDocument::from_fit(&result, echo))?;
    if let Some(path) = &cfg.responsibilities {
        io::write_responsibilities(path, &data.series, &result.resp)?;
    }
    writeln!(
        out,
        "fit: {} iterations, converged={}, loglik={:.6}, {} events -> {}",
        result.iterations,
        result.converged,
        result.loglik_trace.last().copied().unwrap_or(f64::NAN),
        result.events.len(),
        output.display()
    )?;
    Ok(())
}

pub fn cv(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let input = cfg.require_path(&cfg.input, "input")?;
    let output = cfg.require_path(&cfg.output, "output")?;
    let h_sigma = cfg
        .h_sigma
        .or(cfg.bandwidth)
        .ok_or_else(|| UsageError("missing --h-sigma (held fixed during the search)".into()))?;
    let data = io::load_series(&input)?;
    let series = &data.series;

    let default = GridSpec::default_for(series);
    let axis = |explicit: &Option<Vec<f64>>, fallback: &[f64]| -> Vec<f64> {
        match explicit {
            Some(v) => v.clone(),
            None if cfg.grid_size.is_some() || cfg.grid_min.is_some() || cfg.grid_max.is_some() => {
                let lo = cfg.grid_min.unwrap_or(fallback[0]);
                let hi = cfg.grid_max.unwrap_or(fallback[fallback.len() - 1]);
                log_spaced(lo, hi, cfg.grid_size.unwrap_or(fallback.len()))
            }
            None => fallback.to_vec(),
        }
    };
    let grid = GridSpec {
        h_mu: axis(&cfg.h_mu_values, &default.h_mu),
        h_pi: axis(&cfg.h_pi_values, &default.h_pi),
    };

    let base = cfg.fit_config_with(tvmix_core::Bandwidths::new(h_sigma, h_sigma, h_sigma)?)?;
    let folds = make_folds(series.len(), cfg.folds.unwrap_or(5))?;
    let (init, _) = initialize(series, base.k, &cfg.init_config())?;
    let result = grid_search(series, &init, &base, &grid, h_sigma, &folds)?;
    io::write_json(&output, &result)?;

    match result.best_cell() {
        Some(c) => writeln!(
            out,
            "cv: best h_mu={} h_pi={} (h_sigma={}) score={:.6} -> {}",
            c.h_mu,
            c.h_pi,
            h_sigma,
            c.score.unwrap_or(f64::NAN),
            output.display()
        )?,
        None => writeln!(out, "cv: no grid cell could be scored -> {}", output.display())?,
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let output = cfg.require_path(&cfg.output, "output")?;
    let scenario = cfg.scenario(None)?;
    let truth = scenario.generate()?;
    io::write_series(&output, &io::truth_as_labeled(&truth)?)?;
    if let Some(path) = &cfg.truth {
        io::write_json(path, &TruthDocument::from_truth(&truth))?;
    }
    writeln!(
        out,
        "simulate: {} ({}), {} times, {} points -> {}",
        scenario.name(),
        scenario.param(),
        truth.series.len(),
        truth.series.iter().map(|c| c.len()).sum::<usize>(),
        output.display()
    )?;
    Ok(())
}

pub fn bench(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let output = cfg.require_path(&cfg.output, "output")?;
    let config = cfg.bench_config();
    let mut results = Vec::new();
    for param in cfg.sweep()? {
        let scenario = cfg.scenario(Some(param))?;
        let r = run_benchmark(&scenario, &config).with_context(|| format!("{} {}", scenario.name(), param))?;
        for s in &r.summaries {
            writeln!(
                out,
                "bench: {} {:>5} {:<10} mean={:.4} se={:.4} ok={} failed={}",
                r.scenario, r.scenario_param, s.method, s.mean, s.se, s.runs_ok, s.runs_failed
            )?;
        }
        results.push(r);
    }
    io::write_atomic(&output, &io::bench_to_csv(&results)?)?;
    if let Some(path) = &cfg.summary {
        let summary: Vec<_> = results
            .iter()
            .map(|r| {
                json!({
                    "scenario": r.scenario,
                    "scenario_param": r.scenario_param,
                    "summaries": r.summaries,
                    "failures": r.failures,
                })
            })
            .collect();
        io::write_json(path, &json!({ "config": config, "results": summary }))?;
    }
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let fit_path = cfg.require_path(&cfg.fit, "fit")?;
    let input = cfg.require_path(&cfg.input, "input")?;
    if cfg.biomass.is_none() && cfg.confusion.is_none() {
        return Err(UsageError("nothing to do: give --biomass and/or --confusion".into()).into());
    }
    let doc = io::read_fit(&fit_path)?;
    let params = doc.params()?;
    let data = io::load_series(&input)?;
    let resp = e_step(&data.series, &params)?;

    if let Some(path) = &cfg.biomass {
        let subsets: Vec<Vec<usize>> = cfg
            .subsets
            .clone()
            .unwrap_or_default()
            .into_iter()
            .map(|s| s.into_iter().map(|j| j.saturating_sub(1)).collect())
            .collect();
        let table = io::cluster_biomass(&data.series, &resp, &subsets)?;
        io::write_atomic(path, &io::biomass_to_csv(&table)?)?;
        writeln!(out, "evaluate: biomass for {} times -> {}", table.times.len(), path.display())?;
    }
    if let Some(path) = &cfg.confusion {
        let labels = data
            .labels
            .as_ref()
            .ok_or_else(|| UsageError("--confusion needs a `label` column in the input".into()))?;
        let cm = io::confusion_matrix(&data.series, &resp, labels)?;
        for name in &cm.empty {
            eprintln!("warning: population {name:?} has no weight; its column is zero");
        }
        io::write_atomic(path, &io::confusion_to_csv(&cm)?)?;
        writeln!(
            out,
            "evaluate: confusion {} clusters x {} populations -> {}",
            cm.values.len(),
            cm.populations.len(),
            path.display()
        )?;
    }
    Ok(())
}

pub fn theory_check(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let scenario = cfg.theory_scenario()?;
    let report = run_theory_check(&scenario)?;
    if let Some(path) = &cfg.output {
        io::write_json(path, &report)?;
    }
    if let Some(path) = &cfg.table {
        io::write_atomic(path, &io::theory_to_csv(&report)?)?;
    }
    let verdicts = [
        ("linear labeling unbiased in the interior", report.bias.linear_unbiased_interior),
        ("absolute-value bias signs at t=0", report.bias.av_signs_at_zero),
        ("MSE: linear <= absolute value", report.ordering.mse_inequality),
        ("EPE: linear <= absolute value", report.ordering.epe_inequality),
        ("strict MSE gap at t=0", report.ordering.strict_gap_at_zero),
        ("noiseless MSE at t=0 matches closed form", report.ordering.noiseless_matches),
        ("variance formula", report.variance.agrees),
    ];
    for (name, ok) in verdicts {
        writeln!(out, "theory: {} {name}", if ok { "PASS" } else { "FAIL" })?;
    }
    if !report.ordering.paired_reversals.is_empty() {
        writeln!(
            out,
            "theory: note: {} boundary times where the absolute-value labeling has lower MSE (explained by exact gap: {})",
            report.ordering.paired_reversals.len(),
            report.ordering.reversals_explained
        )?;
    }
    if cfg.strict.unwrap_or(false) && !report.all_pass() {
        return Err(VerdictFailed("theory check failed".into()).into());
    }
    Ok(())
}
