//! Baseline effort-optimal controls, then refinement toward lower
//! posterior position uncertainty within a 10% effort budget.

use siif::harness::scenario::{generate_trials, hover_thrust};
use siif::harness::ScenarioConfig;
use siif::objectives::{evaluate, ObjectiveKind, ObjectiveSpec};
use siif::refine::{baseline_solve, refine, RefinementProblem};

fn main() -> siif::Result<()> {
    let cfg = ScenarioConfig { trials: 1, ..ScenarioConfig::default() };
    let sys = cfg.system()?;
    let trial = &generate_trials(&cfg)?[0];
    let problem = trial.problem(&sys, &cfg)?;
    let bounds = cfg.control_bounds(hover_thrust(&sys));
    let baseline = baseline_solve(&problem, &bounds, &cfg.solver)?;
    let before = evaluate(&problem, &baseline, &ObjectiveSpec::evaluation(), false)?;
    println!("baseline: posterior trace sum {:.4}", before.value);
    let rp = RefinementProblem { problem: problem.clone(), bounds, rho: 0.1, objective: ObjectiveSpec::new(ObjectiveKind::PcLie) };
    let s = refine(&rp, &baseline, None, &cfg.solver)?;
    println!(
        "refined:  posterior trace sum {:.4} ({:.1}% lower), effort {:.4} → {:.4}, {} iterations",
        s.report.value,
        100.0 * (1.0 - s.report.value / before.value),
        s.jc_baseline,
        s.jc_final,
        s.iterations
    );
    for (i, (a, b)) in before.traces.iter().zip(&s.report.traces).enumerate() {
        println!("interval {i:2}: {a:.4} → {b:.4}");
    }
    Ok(())
}
