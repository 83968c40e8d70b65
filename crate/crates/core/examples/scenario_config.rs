//! Loading a scenario file with overrides and drawing seeded trials.

use siif::harness::scenario::generate_trials;
use siif::harness::ScenarioConfig;

fn main() -> siif::Result<()> {
    let cfg = ScenarioConfig::from_toml("seed = 3\ntrials = 4\n\n[landmarks]\ncount = 5\n")?;
    println!("grid: Δt = {} s, K = {}, K̄ = {}", cfg.grid.dt, cfg.grid.steps_per_interval, cfg.grid.intervals);
    for t in generate_trials(&cfg)? {
        println!(
            "trial {}: start {:.2?} goal {:.2?} landmarks {}",
            t.id,
            t.start.p.as_slice(),
            t.goal.as_slice(),
            t.landmarks.len()
        );
    }
    Ok(())
}
