//! Bundling fidelity: one interval update over a sweep of interval lengths,
//! explicit batch against the truncated Lie series.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::scenario::{generate_trials, Trial};
use crate::dynamics::System;
use crate::error::{Error, Result};
use crate::geom::PlantState;
use crate::linalg::{rel_frobenius, sym_inverse};
use crate::objectives::Selector;
use crate::siif::{Bundling, IntervalContext, IntervalOptions, Landmarks};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundlingRow {
    pub steps: usize,
    /// Interval length `T = K·Δt` (s).
    pub t: f64,
    pub path: String,
    /// Trace of the measurement information on the start error.
    pub info_trace: f64,
    /// Trace of the full posterior covariance after the update.
    pub cov_trace: f64,
    /// Trace of its position block.
    pub pos_trace: f64,
    /// Relative Frobenius error of the start-error information against the
    /// explicit path.
    pub rel_error: f64,
}

/// The nominal interval start: the first trial's start and cloud, moving with
/// the configured velocity and body rate.
pub fn bundling_scene(cfg: &ScenarioConfig) -> Result<Trial> {
    let one = ScenarioConfig { trials: 1, ..cfg.clone() };
    let mut trial = generate_trials(&one)?.remove(0);
    trial.start = PlantState {
        v: Vector3::from(cfg.bundling.velocity),
        omega: Vector3::from(cfg.bundling.omega),
        ..trial.start
    };
    Ok(trial)
}

pub fn run_bundling_experiment(cfg: &ScenarioConfig) -> Result<Vec<BundlingRow>> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let trial = bundling_scene(cfg)?;
    let x0 = sys.nav_state(trial.start).to_embedding();
    let u = sys.hover_control();
    let n = sys.dims().err;
    let s0 = DMatrix::identity(n, n) / cfg.filter.p0_scale;
    let pos = Selector::position(&sys);
    let lms = Landmarks::points(&trial.landmarks);
    let mut rows = Vec::new();
    for &k in &cfg.bundling.steps {
        let t = k as f64 * cfg.grid.dt;
        let mut reference = None;
        for bundling in [Bundling::Explicit, Bundling::Lie] {
            let options = IntervalOptions { bundling, r: cfg.filter.lie_order, ..IntervalOptions::default() };
            let ctx = IntervalContext::new(&sys, cfg.grid.dt, k, options)?;
            let res = ctx.update(&s0, &x0, &u, &lms)?;
            let p = sym_inverse(&res.s);
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { step: k, what: "posterior covariance".into() });
            }
            let reference = reference.get_or_insert_with(|| res.info_e0.clone());
            rows.push(BundlingRow {
                steps: k,
                t,
                path: match bundling {
                    Bundling::Explicit => "explicit",
                    Bundling::Lie => "lie",
                }
                .into(),
                info_trace: res.info_e0.trace(),
                cov_trace: p.trace(),
                pos_trace: pos.block(&p).trace(),
                rel_error: rel_frobenius(&res.info_e0, reference),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_rows_have_zero_error_and_info_grows() {
        let cfg = ScenarioConfig {
            bundling: crate::harness::config::BundlingConfig { steps: vec![2, 4, 6], ..Default::default() },
            ..Default::default()
        };
        let rows = run_bundling_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 6);
        let explicit: Vec<_> = rows.iter().filter(|r| r.path == "explicit").collect();
        assert!(explicit.iter().all(|r| r.rel_error == 0.0));
        for path in ["explicit", "lie"] {
            let tr: Vec<f64> = rows.iter().filter(|r| r.path == path).map(|r| r.info_trace).collect();
            assert!(tr.windows(2).all(|w| w[1] >= w[0]), "{path}: {tr:?}");
        }
    }
}
