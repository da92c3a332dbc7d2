use metapop::analysis::{
    bisect_critical, estimate_survival, mean_occupancy, ruin_probability, simulate_ruin, BisectionSpec, RuinProblem,
    SurvivalSetup,
};
use metapop::engine::{simulate, EngineOptions, RngSeed, Runner, SampleGrid};
use metapop::lattice::{make_configuration, LatticeWindow};
use metapop::models::ModelSpec;
use metapop::order::{check_general, check_single_change, cross_validate, table_from_model, OrderVerdict};
use metapop::percolation::{
    estimate_dominator_hit, estimate_dry_probability_sweep, estimate_edge_event, estimate_wet_probability_sweep,
    simulate_oriented_percolation,
};
use metapop::stats::{wilson, Z95};
use serde::Serialize;
use serde_json::json;

use crate::config::{BlockKindConfig, ExperimentParams, OrderMode, RunConfig};
use crate::output::{fmt_float, Cell, Csv, Writer};
use crate::{CliError, Outcome};

struct Setup {
    model: ModelSpec,
    window: LatticeWindow,
}

fn setup(config: &RunConfig) -> Result<Setup, CliError> {
    let model = config.model_spec()?;
    let window = config.window.as_ref().expect("validated").build()?;
    Ok(Setup { model, window })
}

fn initial(config: &RunConfig, model: &ModelSpec, window: &LatticeWindow) -> Result<metapop::lattice::Configuration, CliError> {
    let init = config.init.as_ref().expect("validated").resolve(config.window.as_ref().expect("validated"), model.capacity());
    Ok(make_configuration(window, &init, Some(model.max_occupancy()))?)
}

fn interval_cells(lo: f64, hi: f64) -> [Cell; 2] {
    [Cell::F(lo), Cell::F(hi)]
}

fn verdict_code(v: &OrderVerdict) -> (u8, &'static str) {
    match v {
        OrderVerdict::Ordered => (0, "ordered"),
        OrderVerdict::NotOrdered { .. } => (1, "not ordered"),
        OrderVerdict::Inconclusive { .. } => (2, "inconclusive"),
    }
}

/// Runs a validated configuration and writes its output files. `threads`
/// limits the worker pool; `None` uses all cores.
pub fn run(config: &RunConfig, threads: Option<usize>) -> Result<Outcome, CliError> {
    let runner = Runner::new(threads)?;
    let mut out = Writer::new(config)?;
    let seed = config.seed;
    let replicas = config.replicas;
    let mut exit_code = 0;
    let summary = match &config.params {
        ExperimentParams::Simulate { horizon, step, per_site } => {
            let Setup { model, window } = setup(config)?;
            let init = initial(config, &model, &window)?;
            let grid = SampleGrid { per_site: *per_site, ..SampleGrid::uniform(*horizon, *step)? };
            let runs = runner.try_map(replicas, |r| {
                simulate(&model, &window, &init, *horizon, &grid, RngSeed::new(seed, r), EngineOptions::default())
            })?;
            let mut header = vec!["replica".to_string(), "time".into(), "total".into()];
            if *per_site {
                header.extend((0..window.num_sites()).map(|i| format!("site_{i}")));
            }
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            let mut csv = Csv::new(config, &header);
            #[derive(Serialize)]
            struct RunSummary {
                replica: u64,
                extinction_time: Option<f64>,
                final_time: f64,
                final_total: u64,
                events: u64,
                cap_hits: u64,
            }
            let mut summaries = Vec::new();
            for (r, t) in runs.iter().enumerate() {
                for s in &t.samples {
                    let mut cells = vec![Cell::U(r as u64), Cell::F(s.time), Cell::U(s.total)];
                    if let Some(sites) = &s.sites {
                        cells.extend(sites.iter().map(|&n| Cell::U(n as u64)));
                    }
                    csv.row(&cells);
                }
                summaries.push(RunSummary {
                    replica: r as u64,
                    extinction_time: t.extinction_time,
                    final_time: t.final_time,
                    final_total: t.final_state.iter().map(|&n| n as u64).sum(),
                    events: t.events,
                    cap_hits: t.cap_hits,
                });
            }
            out.csv(csv)?;
            let extinct = summaries.iter().filter(|s| s.extinction_time.is_some()).count();
            out.json(&json!({ "runs": summaries }))?;
            format!("simulate: {replicas} run(s), {extinct} extinct by t = {}", fmt_float(*horizon))
        }
        ExperimentParams::Survival { horizon } => {
            let Setup { model, window } = setup(config)?;
            let init = initial(config, &model, &window)?;
            let est = estimate_survival(&model, &window, &init, *horizon, replicas, seed, &runner)?;
            out.json(&est)?;
            format!(
                "survival: {}/{} alive at t = {} (95% CI [{}, {}])",
                est.survivals,
                est.replicas,
                fmt_float(*horizon),
                fmt_float(est.interval.lo),
                fmt_float(est.interval.hi)
            )
        }
        ExperimentParams::Sweep { axis, values, horizon } => {
            let Setup { model, window } = setup(config)?;
            let mut csv = Csv::new(config, &["value", "replicas", "survivals", "estimate", "ci_lo", "ci_hi", "horizon_adequate"]);
            let mut rows = Vec::new();
            for v in values.values() {
                let m = axis.apply(&model, v)?;
                let init = initial(config, &m, &window)?;
                let est = estimate_survival(&m, &window, &init, *horizon, replicas, seed, &runner)?;
                let [lo, hi] = interval_cells(est.interval.lo, est.interval.hi);
                csv.row(&[
                    Cell::F(v),
                    Cell::U(est.replicas),
                    Cell::U(est.survivals),
                    Cell::F(est.estimate),
                    lo,
                    hi,
                    Cell::S(est.horizon_adequate.to_string()),
                ]);
                rows.push(json!({ "value": v, "survival": est }));
            }
            out.csv(csv)?;
            out.json(&json!({ "axis": axis, "points": rows }))?;
            format!("sweep: {} points written", rows.len())
        }
        ExperimentParams::Bisect { axis, lo, hi, threshold, tolerance, max_doublings, horizon } => {
            let Setup { model, window } = setup(config)?;
            let init = config.init.as_ref().expect("validated").resolve(config.window.as_ref().expect("validated"), model.capacity());
            let setup = SurvivalSetup { model, window, init, horizon: *horizon };
            let spec = BisectionSpec {
                axis: *axis,
                lo: *lo,
                hi: *hi,
                threshold: *threshold,
                tolerance: *tolerance,
                replicas,
                max_doublings: *max_doublings,
                seed,
            };
            let result = bisect_critical(&setup, &spec, &runner)?;
            let mut csv = Csv::new(config, &["value", "replicas", "survivals", "estimate", "ci_lo", "ci_hi", "side"]);
            for d in &result.decisions {
                let [lo, hi] = interval_cells(d.interval.lo, d.interval.hi);
                let side = serde_json::to_value(d.side).unwrap().as_str().unwrap_or_default().to_string();
                csv.row(&[Cell::F(d.value), Cell::U(d.replicas), Cell::U(d.survivals), Cell::F(d.estimate), lo, hi, Cell::S(side)]);
            }
            out.csv(csv)?;
            out.json(&json!({ "spec": spec, "result": result }))?;
            format!(
                "bisect: crossing near {} in [{}, {}]{}",
                fmt_float(result.estimate),
                fmt_float(result.lo),
                fmt_float(result.hi),
                if result.converged { "" } else { " (not converged)" }
            )
        }
        ExperimentParams::CheckOrder { high, mode, k_bound, budget } => {
            let low = table_from_model(&config.model_spec()?)?;
            let high = table_from_model(&ModelSpec::new(high.clone())?)?;
            let verdict = match mode {
                OrderMode::General => check_general(&low, &high, *k_bound, *budget)?,
                OrderMode::Single => check_single_change(&low, &high)?,
                OrderMode::Cross => {
                    let cv = cross_validate(&low, &high)?;
                    out.json(&cv)?;
                    cv.general
                }
            };
            if *mode != OrderMode::Cross {
                out.json(&verdict)?;
            }
            let (code, word) = verdict_code(&verdict);
            exit_code = code;
            match verdict.witness() {
                Some(w) => format!("check-order: {word}; witness {}", serde_json::to_string(w).unwrap()),
                None => format!("check-order: {word}"),
            }
        }
        ExperimentParams::Ruin { r1, r2, j, p, walks } => {
            let prob = RuinProblem { r1: *r1, r2: *r2, j: *j, p: *p };
            let value = ruin_probability(&prob)?;
            let mc = if *walks > 0 {
                let hits = simulate_ruin(&prob, *walks, RngSeed::new(seed, 0))?;
                let est = hits as f64 / *walks as f64;
                let se = (est * (1.0 - est) / *walks as f64).sqrt();
                Some(json!({ "walks": walks, "hits": hits, "estimate": est, "se": se }))
            } else {
                None
            };
            out.json(&json!({ "problem": prob, "probability": value, "monte_carlo": mc }))?;
            format!("ruin probability {}", fmt_float(value))
        }
        ExperimentParams::Blocks { kind, l, times, phi_allee, phi_zero_inside } => {
            let model = config.model_spec()?;
            match kind {
                BlockKindConfig::Survival => {
                    let est = estimate_wet_probability_sweep(&model, *l, times, replicas, seed, *phi_zero_inside, &runner)?;
                    let mut csv = Csv::new(config, &["t", "replicas", "successes", "frequency", "ci_lo", "ci_hi"]);
                    for e in &est {
                        let [lo, hi] = interval_cells(e.interval.lo, e.interval.hi);
                        csv.row(&[Cell::F(e.block.t), Cell::U(e.replicas), Cell::U(e.successes), Cell::F(e.frequency), lo, hi]);
                    }
                    out.csv(csv)?;
                    out.json(&est)?;
                    format!("blocks: survival-block frequency {} at T = {}", fmt_float(est.last().unwrap().frequency), fmt_float(*times.last().unwrap()))
                }
                BlockKindConfig::Extinction => {
                    let values = if phi_allee.is_empty() { vec![model.phi_allee()] } else { phi_allee.clone() };
                    let est = estimate_dry_probability_sweep(&model, *l, times[0], &values, replicas, seed, &runner)?;
                    let mut csv = Csv::new(config, &["phi_allee", "replicas", "successes", "frequency", "ci_lo", "ci_hi"]);
                    for e in &est {
                        let [lo, hi] = interval_cells(e.interval.lo, e.interval.hi);
                        csv.row(&[e.parameter.into(), Cell::U(e.replicas), Cell::U(e.successes), Cell::F(e.frequency), lo, hi]);
                    }
                    out.csv(csv)?;
                    out.json(&est)?;
                    let freqs: Vec<String> = est.iter().map(|e| fmt_float(e.frequency)).collect();
                    format!("blocks: extinction-block frequencies [{}]", freqs.join(", "))
                }
                BlockKindConfig::Dominator => {
                    let mut csv = Csv::new(config, &["s", "replicas", "hits", "estimate", "ci_lo", "ci_hi", "exact"]);
                    let mut all = Vec::new();
                    for &s in times {
                        let h = estimate_dominator_hit(&model, s, replicas, seed, &runner)?;
                        let [lo, hi] = interval_cells(h.interval.lo, h.interval.hi);
                        csv.row(&[Cell::F(s), Cell::U(h.replicas), Cell::U(h.hits), Cell::F(h.estimate), lo, hi, Cell::F(h.exact)]);
                        all.push(h);
                    }
                    out.csv(csv)?;
                    out.json(&all)?;
                    let last = all.last().unwrap();
                    format!("blocks: dominator hit {} (exact {}) at S = {}", fmt_float(last.estimate), fmt_float(last.exact), fmt_float(last.time))
                }
            }
        }
        ExperimentParams::Percolation { width, height, p, radius } => {
            let trials = runner.try_map(replicas, |r| {
                p.iter()
                    .map(|&q| simulate_oriented_percolation(*width, *height, q, *radius, RngSeed::new(seed, r)).map(|o| (o.percolates, o.max_height)))
                    .collect::<metapop::Result<Vec<_>>>()
            })?;
            let mut csv = Csv::new(config, &["p", "trials", "percolated", "frequency", "ci_lo", "ci_hi", "mean_max_height"]);
            let mut rows = Vec::new();
            for (i, &q) in p.iter().enumerate() {
                let hits = trials.iter().filter(|t| t[i].0).count() as u64;
                let mean_height = trials.iter().map(|t| t[i].1 as f64).sum::<f64>() / replicas as f64;
                let ci = wilson(hits, replicas, Z95);
                csv.row(&[Cell::F(q), Cell::U(replicas), Cell::U(hits), Cell::F(hits as f64 / replicas as f64), Cell::F(ci.lo), Cell::F(ci.hi), Cell::F(mean_height)]);
                rows.push(json!({
                    "p": q, "trials": replicas, "percolated": hits,
                    "frequency": hits as f64 / replicas as f64, "interval": ci, "mean_max_height": mean_height,
                }));
            }
            out.csv(csv)?;
            out.json(&rows)?;
            format!("percolation: {} value(s) of p over {replicas} trials", p.len())
        }
        ExperimentParams::EdgeEvent { dim, cutoff } => {
            let model = config.model_spec()?;
            let est = estimate_edge_event(&model, *dim, *cutoff, replicas, seed, &runner)?;
            out.json(&est)?;
            format!(
                "edge-event: {}/{} successes, {} undecided at cutoff {}",
                est.successes,
                est.replicas,
                est.undecided,
                fmt_float(*cutoff)
            )
        }
        ExperimentParams::MeanOccupancy { horizon, step } => {
            let Setup { model, window } = setup(config)?;
            let init = initial(config, &model, &window)?;
            let grid = SampleGrid::uniform(*horizon, *step)?.times;
            let series = mean_occupancy(&model, &window, &init, &grid, replicas, seed, &runner)?;
            let mut csv = Csv::new(config, &["time", "mean", "se"]);
            for i in 0..series.times.len() {
                csv.row(&[Cell::F(series.times[i]), Cell::F(series.mean[i]), Cell::F(series.se[i])]);
            }
            out.csv(csv)?;
            out.json(&series)?;
            format!("mean-occupancy: {} at t = {}", fmt_float(*series.mean.last().unwrap()), fmt_float(*horizon))
        }
    };
    Ok(Outcome { exit_code, summary, files: out.finish() })
}
