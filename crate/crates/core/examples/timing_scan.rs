//! Full-trajectory evaluation time against landmark count (run with
//! `--release`).

use siif::harness::checks::timing_criterion;
use siif::harness::config::TimingConfig;
use siif::harness::timing::run_timing_experiment;
use siif::harness::ScenarioConfig;

fn main() -> siif::Result<()> {
    let cfg = ScenarioConfig { timing: TimingConfig { landmark_counts: vec![10, 50], repetitions: 3 }, ..ScenarioConfig::default() };
    let recs = run_timing_experiment(&cfg)?;
    for r in &recs {
        println!("{:>12} {:>8} N={:<4} {:8.2} ms", r.sensor_path, r.bundling, r.landmarks, r.mean_ms);
    }
    println!("{}", timing_criterion(&recs).line());
    Ok(())
}
