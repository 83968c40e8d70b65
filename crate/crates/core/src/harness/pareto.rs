//! Pareto batch: per trial, a baseline solve followed by refinement under
//! every objective across the ρ sweep, all re-evaluated by the reporting
//! evaluator (explicit bundling, hard visibility).

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::scenario::{generate_trials, hover_thrust, Trial};
use crate::dynamics::Quadrotor;
use crate::error::{Error, Result};
use crate::objectives::{evaluate, ObjectiveKind, ObjectiveSpec, Problem};
use crate::refine::{baseline_solve, refine, RefinementProblem};

/// Version of the summary JSON layout.
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Label of the unrefined baseline rows.
pub const BASELINE: &str = "baseline";

/// One method at one ρ on one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub trial: usize,
    pub method: String,
    pub rho: f64,
    /// `ok` or `failed`.
    pub status: String,
    pub jc_base: f64,
    pub jc_final: f64,
    pub jc_increase_pct: f64,
    /// Reporting posterior-trace objective of the returned controls.
    pub jobs: f64,
    /// `1 − jobs / jobs_baseline`; the improvement proxy.
    pub reduction: f64,
    /// Time spent above the safety threshold (s).
    pub violation_time: f64,
    pub iterations: usize,
    pub converged: bool,
    pub improved: bool,
    /// Wall time of the solve; zero in deterministic mode.
    pub wall_ms: f64,
}

/// Reporting position-covariance trace after one interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub trial: usize,
    pub method: String,
    pub rho: f64,
    pub interval: usize,
    /// Interval end time (s).
    pub t: f64,
    pub trace: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub rows: Vec<MethodRow>,
    pub traces: Vec<TraceRow>,
    /// Set when the baseline itself failed and the trial was skipped.
    pub error: Option<String>,
}

/// Batch medians for one method at one ρ, over trials where it succeeded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: String,
    pub rho: f64,
    pub trials: usize,
    pub median_reduction: f64,
    pub median_jc_increase_pct: f64,
    pub median_violation_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub trials: usize,
    pub failed_trials: usize,
    pub failed_solves: usize,
    pub safety_threshold: f64,
    pub improvement_proxy: String,
    pub baseline_median_violation_time: f64,
    pub curves: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoOutput {
    pub results: Vec<TrialResult>,
    pub summary: ParetoSummary,
}

impl ParetoOutput {
    pub fn rows(&self) -> impl Iterator<Item = &MethodRow> {
        self.results.iter().flat_map(|r| &r.rows)
    }

    pub fn traces(&self) -> impl Iterator<Item = &TraceRow> {
        self.results.iter().flat_map(|r| &r.traces)
    }

    pub fn curve(&self, method: &str, rho: f64) -> Option<&CurvePoint> {
        self.summary.curves.iter().find(|c| c.method == method && c.rho == rho)
    }
}

fn objective_spec(cfg: &ScenarioConfig, kind: ObjectiveKind) -> ObjectiveSpec {
    ObjectiveSpec { r: cfg.filter.lie_order, p0_scale: cfg.filter.p0_scale, ..ObjectiveSpec::new(kind) }
}

/// The reporting evaluator with the configured prior.
pub fn evaluation_spec(cfg: &ScenarioConfig) -> ObjectiveSpec {
    ObjectiveSpec { p0_scale: cfg.filter.p0_scale, ..ObjectiveSpec::evaluation() }
}

/// Sweep values in ascending order, duplicates removed.
pub fn sorted_rho(cfg: &ScenarioConfig) -> Vec<f64> {
    let mut rho = cfg.pareto.rho.clone();
    rho.sort_by(f64::total_cmp);
    rho.dedup();
    rho
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

struct Evaluated {
    jobs: f64,
    traces: Vec<f64>,
}

fn report(problem: &Problem<Quadrotor>, controls: &[Vec<f64>], cfg: &ScenarioConfig) -> Result<Evaluated> {
    let r = evaluate(problem, controls, &evaluation_spec(cfg), false)?;
    Ok(Evaluated { jobs: r.value, traces: r.traces })
}

fn violation_time(traces: &[f64], threshold: f64, span: f64) -> f64 {
    traces.iter().filter(|t| **t > threshold).count() as f64 * span
}

/// Runs one trial. Solver failures of individual refinements become
/// `failed` rows; a failed baseline fails the whole trial.
pub fn run_trial(cfg: &ScenarioConfig, sys: &Quadrotor, trial: &Trial, deterministic: bool) -> Result<TrialResult> {
    let problem = trial.problem(sys, cfg)?;
    let bounds = cfg.control_bounds(hover_thrust(sys));
    let span = cfg.grid.dt * cfg.grid.steps_per_interval as f64;
    let threshold = cfg.safety_threshold();
    let clock = |t: Instant| if deterministic { 0.0 } else { t.elapsed().as_secs_f64() * 1e3 };

    let t0 = Instant::now();
    let baseline = baseline_solve(&problem, &bounds, &cfg.solver)?;
    let base_eval = report(&problem, &baseline, cfg)?;
    let jc_base = evaluate(&problem, &baseline, &ObjectiveSpec::new(ObjectiveKind::Conventional), false)?.value;
    let mut out = TrialResult { trial: trial.id, rows: Vec::new(), traces: Vec::new(), error: None };
    let push = |out: &mut TrialResult, method: &str, rho: f64, eval: &Evaluated, row: MethodRow| {
        out.traces.extend(eval.traces.iter().enumerate().map(|(i, &trace)| TraceRow {
            trial: trial.id,
            method: method.into(),
            rho,
            interval: i,
            t: (i + 1) as f64 * span,
            trace,
        }));
        out.rows.push(row);
    };
    let base_row = MethodRow {
        trial: trial.id,
        method: BASELINE.into(),
        rho: 0.0,
        status: "ok".into(),
        jc_base,
        jc_final: jc_base,
        jc_increase_pct: 0.0,
        jobs: base_eval.jobs,
        reduction: 0.0,
        violation_time: violation_time(&base_eval.traces, threshold, span),
        iterations: 0,
        converged: true,
        improved: false,
        wall_ms: clock(t0),
    };
    push(&mut out, BASELINE, 0.0, &base_eval, base_row);

    for kind in cfg.objective_kinds()? {
        let mut warm: Option<Vec<Vec<f64>>> = None;
        for rho in sorted_rho(cfg) {
            let rp = RefinementProblem { problem: problem.clone(), bounds: bounds.clone(), rho, objective: objective_spec(cfg, kind) };
            let t = Instant::now();
            let solved = refine(&rp, &baseline, warm.as_deref(), &cfg.solver)
                .and_then(|s| report(&problem, &s.controls, cfg).map(|e| (s, e)));
            match solved {
                Ok((s, eval)) => {
                    let row = MethodRow {
                        trial: trial.id,
                        method: kind.label().into(),
                        rho,
                        status: "ok".into(),
                        jc_base,
                        jc_final: s.jc_final,
                        jc_increase_pct: 100.0 * (s.jc_final / jc_base - 1.0),
                        jobs: eval.jobs,
                        reduction: 1.0 - eval.jobs / base_eval.jobs,
                        violation_time: violation_time(&eval.traces, threshold, span),
                        iterations: s.iterations,
                        converged: s.converged,
                        improved: s.improved,
                        wall_ms: clock(t),
                    };
                    push(&mut out, kind.label(), rho, &eval, row);
                    warm = Some(s.controls);
                }
                Err(e) => {
                    log::warn!("trial {} {} ρ={rho}: {e}", trial.id, kind.label());
                    out.rows.push(MethodRow {
                        trial: trial.id,
                        method: kind.label().into(),
                        rho,
                        status: "failed".into(),
                        jc_base,
                        jc_final: f64::NAN,
                        jc_increase_pct: f64::NAN,
                        jobs: f64::NAN,
                        reduction: f64::NAN,
                        violation_time: f64::NAN,
                        iterations: 0,
                        converged: false,
                        improved: false,
                        wall_ms: clock(t),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Medians per method and ρ over successful rows.
pub fn summarize(cfg: &ScenarioConfig, results: &[TrialResult]) -> ParetoSummary {
    let mut groups: BTreeMap<(usize, u64), (String, f64, Vec<&MethodRow>)> = BTreeMap::new();
    let order: Vec<String> =
        std::iter::once(BASELINE.to_string()).chain(cfg.pareto.objectives.iter().cloned()).collect();
    for row in results.iter().flat_map(|r| &r.rows).filter(|r| r.status == "ok") {
        let Some(m) = order.iter().position(|o| *o == row.method) else { continue };
        groups.entry((m, row.rho.to_bits())).or_insert_with(|| (row.method.clone(), row.rho, Vec::new())).2.push(row);
    }
    let curves = groups
        .into_values()
        .map(|(method, rho, rows)| {
            let col = |f: fn(&MethodRow) -> f64| median(&mut rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            CurvePoint {
                method,
                rho,
                trials: rows.len(),
                median_reduction: col(|r| r.reduction),
                median_jc_increase_pct: col(|r| r.jc_increase_pct),
                median_violation_time: col(|r| r.violation_time),
            }
        })
        .collect::<Vec<_>>();
    let baseline_median_violation_time =
        curves.iter().find(|c| c.method == BASELINE).map_or(f64::NAN, |c| c.median_violation_time);
    ParetoSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        seed: cfg.seed,
        trials: results.len(),
        failed_trials: results.iter().filter(|r| r.error.is_some()).count(),
        failed_solves: results.iter().flat_map(|r| &r.rows).filter(|r| r.status != "ok").count(),
        safety_threshold: cfg.safety_threshold(),
        improvement_proxy: "reduction of the summed position-covariance trace under the reporting evaluator".into(),
        baseline_median_violation_time,
        curves,
    }
}

/// Runs all trials on a pool of `threads` workers (all cores when `None`)
/// and merges results in trial order.
pub fn run_pareto_batch(cfg: &ScenarioConfig, deterministic: bool, threads: Option<usize>) -> Result<ParetoOutput> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let trials = generate_trials(cfg)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<TrialResult> = pool.install(|| {
        trials
            .par_iter()
            .map(|trial| {
                run_trial(cfg, &sys, trial, deterministic).unwrap_or_else(|e| {
                    log::warn!("trial {} failed: {e}", trial.id);
                    TrialResult { trial: trial.id, rows: Vec::new(), traces: Vec::new(), error: Some(e.to_string()) }
                })
            })
            .collect()
    });
    let summary = summarize(cfg, &results);
    Ok(ParetoOutput { results, summary })
}
