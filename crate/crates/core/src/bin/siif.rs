use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use siif::harness::checks::{bundling_criterion, run_all, timing_criterion};
use siif::harness::output::{
    output_path, write_csv, write_json, BUNDLING_HEADER, PARETO_HEADER, TIMING_HEADER, TRACE_HEADER,
};
use siif::harness::pareto::{run_pareto_batch, run_trial};
use siif::harness::scenario::generate_trials;
use siif::harness::{bundling, timing, ScenarioConfig};
use siif::Result;

#[derive(Parser)]
#[command(name = "siif", version, about = "Interval information filtering experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Zero all wall-clock columns so repeated runs are byte-identical.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads for trial-level parallelism (all cores by default).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Single-interval bundling fidelity over a sweep of interval lengths.
    Bundling,
    /// Full-trajectory evaluation time against landmark count.
    Timing,
    /// Refinement batch over all objectives and the ρ sweep.
    Pareto {
        /// Overrides the configured trial count.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// One trial of the batch, written as JSON.
    Trial {
        #[arg(long, default_value_t = 0)]
        id: usize,
    },
    /// Oracle and property checks.
    Validate {
        /// Random instances in the gradient suite.
        #[arg(long, default_value_t = 20)]
        gradient_instances: usize,
    },
    /// Prints the default configuration template.
    Config,
}

fn load(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let c = &cli.common;
    let mut cfg = load(c)?;
    let dir = &c.out_dir;
    match cli.command {
        Command::Bundling => {
            let rows = bundling::run_bundling_experiment(&cfg)?;
            write_csv(&output_path(dir, "bundling.csv")?, &rows, &BUNDLING_HEADER)?;
            println!("{}", bundling_criterion(&rows, 0.2).line());
        }
        Command::Timing => {
            let recs = timing::run_timing_experiment(&cfg)?;
            write_csv(&output_path(dir, "timing.csv")?, &recs, &TIMING_HEADER)?;
            for r in &recs {
                println!("{:>12} {:>8} N={:<4} {:9.2} ± {:.2} ms", r.sensor_path, r.bundling, r.landmarks, r.mean_ms, r.std_ms);
            }
            println!("{}", timing_criterion(&recs).line());
        }
        Command::Pareto { trials } => {
            if let Some(n) = trials {
                cfg.trials = n;
            }
            let out = run_pareto_batch(&cfg, c.deterministic, c.threads)?;
            write_csv(&output_path(dir, "pareto.csv")?, out.rows(), &PARETO_HEADER)?;
            write_csv(&output_path(dir, "traces.csv")?, out.traces(), &TRACE_HEADER)?;
            write_json(&output_path(dir, "summary.json")?, &out.summary)?;
            for p in &out.summary.curves {
                println!(
                    "{:>15} ρ={:<5} median reduction {:6.3}  J_c +{:5.1}%  violation {:.2} s",
                    p.method, p.rho, p.median_reduction, p.median_jc_increase_pct, p.median_violation_time
                );
            }
        }
        Command::Trial { id } => {
            let all = generate_trials(&ScenarioConfig { trials: id + 1, ..cfg.clone() })?;
            let trial = &all[id];
            let res = run_trial(&cfg, &cfg.system()?, trial, c.deterministic)?;
            write_json(&output_path(dir, &format!("trial_{id}.json"))?, &json!({ "trial": trial, "result": res }))?;
            for r in &res.rows {
                println!("{:>15} ρ={:<5} jobs {:9.4} reduction {:6.3} J_c +{:5.1}%", r.method, r.rho, r.jobs, r.reduction, r.jc_increase_pct);
            }
        }
        Command::Validate { gradient_instances } => {
            let checks = run_all(&cfg, gradient_instances)?;
            write_json(&output_path(dir, "validate.json")?, &checks)?;
            for ch in &checks {
                println!("{}", ch.line());
            }
            return Ok(checks.iter().all(|ch| ch.passed));
        }
        Command::Config => print!("{}", siif::harness::config::TEMPLATE),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}", json!({ "error": { "kind": "check_failed", "message": "one or more checks failed" } }));
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}
