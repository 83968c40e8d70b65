//! A small Pareto batch: two trials, short horizon, a reduced solver budget.

use siif::harness::config::{GridConfig, ParetoConfig};
use siif::harness::pareto::run_pareto_batch;
use siif::harness::ScenarioConfig;
use siif::refine::SolverSettings;

fn main() -> siif::Result<()> {
    let cfg = ScenarioConfig {
        trials: 2,
        grid: GridConfig { intervals: 5, ..GridConfig::default() },
        solver: SolverSettings { max_inner: 8, max_outer: 3, ..ScenarioConfig::default().solver },
        pareto: ParetoConfig { objectives: vec!["pc-lie".into(), "max-visibility".into()], rho: vec![0.1, 0.25], ..ParetoConfig::default() },
        ..ScenarioConfig::default()
    };
    let out = run_pareto_batch(&cfg, true, None)?;
    for c in &out.summary.curves {
        println!("{:>15} ρ={:<5} median reduction {:6.3}  violation {:.2} s", c.method, c.rho, c.median_reduction, c.median_violation_time);
    }
    Ok(())
}
