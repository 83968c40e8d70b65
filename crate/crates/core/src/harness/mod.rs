//! Experiment harness: configuration, seeded scenarios, the bundling,
//! timing and Pareto experiments, oracle checks and result files.

pub mod bundling;
pub mod checks;
pub mod config;
pub mod output;
pub mod pareto;
pub mod scenario;
pub mod timing;

pub use config::ScenarioConfig;
