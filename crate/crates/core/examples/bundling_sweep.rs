//! Bundling fidelity over interval lengths, printed as a table.

use siif::harness::bundling::run_bundling_experiment;
use siif::harness::checks::bundling_criterion;
use siif::harness::ScenarioConfig;

fn main() -> siif::Result<()> {
    let rows = run_bundling_experiment(&ScenarioConfig::default())?;
    println!("{:>3} {:>6} {:>9} {:>12} {:>9} {:>10}", "K", "T", "path", "info trace", "tr P", "rel error");
    for r in &rows {
        println!("{:>3} {:6.2} {:>9} {:12.2} {:9.4} {:10.2e}", r.steps, r.t, r.path, r.info_trace, r.cov_trace, r.rel_error);
    }
    println!("{}", bundling_criterion(&rows, 0.2).line());
    Ok(())
}
