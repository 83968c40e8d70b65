//! Wall-clock scaling of full-trajectory evaluation (with gradients) in the
//! landmark count, for both sensor paths and both bundlings.

use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::scenario::{generate_trials, trial_rng};
use crate::dynamics::{Quadrotor, System};
use crate::error::Result;
use crate::sensing::Landmark;
use crate::siif::{run_trajectory, Bundling, IntervalContext, IntervalOptions, Landmarks};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    /// `per-landmark` or `affine`.
    pub sensor_path: String,
    /// `explicit` or `lie`.
    pub bundling: String,
    pub landmarks: usize,
    pub repetitions: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// The four timed configurations in table order: sensor path label, affine
/// aggregation, bundling.
pub const METHODS: [(&str, bool, Bundling); 4] = [
    ("per-landmark", false, Bundling::Explicit),
    ("per-landmark", false, Bundling::Lie),
    ("affine", true, Bundling::Explicit),
    ("affine", true, Bundling::Lie),
];

/// Cloud ahead of a level, yaw-`yaw` start: within half the field of view and
/// 3 to 8 m away, so every landmark stays in view.
pub fn frontal_cloud(rng: &mut impl Rng, p: &Vector3<f64>, yaw: f64, half_fov: f64, n: usize) -> Vec<Landmark> {
    (0..n)
        .map(|_| {
            let bearing = yaw + rng.gen_range(-0.5..0.5) * half_fov;
            let range = rng.gen_range(3.0..8.0);
            let dz = range * rng.gen_range(-0.5..0.5) * half_fov.tan();
            p + Vector3::new(range * bearing.cos(), range * bearing.sin(), dz)
        })
        .collect()
}

/// Deterministic gentle manoeuvre around hover.
pub fn timing_controls(sys: &Quadrotor, intervals: usize) -> Vec<Vec<f64>> {
    let hover = sys.hover_control();
    (0..intervals)
        .map(|i| {
            let s = (i as f64 * 0.7).sin();
            vec![hover[0] * (1.0 + 0.02 * s), 0.002 * s, -0.001 * s, 0.003]
        })
        .collect()
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 { samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Runs on the calling thread; results are only meaningful in optimized builds.
pub fn run_timing_experiment(cfg: &ScenarioConfig) -> Result<Vec<TimingRecord>> {
    cfg.validate()?;
    if cfg!(debug_assertions) {
        log::warn!("timing an unoptimized build; absolute numbers are not representative");
    }
    let sys = cfg.system()?;
    let one = ScenarioConfig { trials: 1, ..cfg.clone() };
    let start = generate_trials(&one)?.remove(0).start;
    let yaw = start.r.matrix()[(1, 0)].atan2(start.r.matrix()[(0, 0)]);
    let x0 = sys.nav_state(start).to_embedding();
    let controls = timing_controls(&sys, cfg.grid.intervals);
    let n = sys.dims().err;
    let s0 = DMatrix::identity(n, n) / cfg.filter.p0_scale;
    let mut rng = trial_rng(cfg.seed, usize::MAX);
    let mut out = Vec::new();
    for &count in &cfg.timing.landmark_counts {
        let cloud = frontal_cloud(&mut rng, &start.p, yaw, cfg.camera.theta_max, count);
        let lms = Landmarks::points(&cloud);
        for (path, affine, bundling) in METHODS {
            let options = IntervalOptions { bundling, affine, r: cfg.filter.lie_order, ..IntervalOptions::default() };
            let ctx = IntervalContext::new(&sys, cfg.grid.dt, cfg.grid.steps_per_interval, options)?;
            run_trajectory(&ctx, &x0, &controls, &s0, &lms, true)?;
            let mut samples = Vec::with_capacity(cfg.timing.repetitions);
            for _ in 0..cfg.timing.repetitions {
                let t = Instant::now();
                let run = run_trajectory(&ctx, &x0, &controls, &s0, &lms, true)?;
                samples.push(t.elapsed().as_secs_f64() * 1e3);
                std::hint::black_box(run);
            }
            let (mean_ms, std_ms) = mean_std(&samples);
            out.push(TimingRecord {
                sensor_path: path.into(),
                bundling: match bundling {
                    Bundling::Explicit => "explicit",
                    Bundling::Lie => "lie",
                }
                .into(),
                landmarks: count,
                repetitions: cfg.timing.repetitions,
                mean_ms,
                std_ms,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frontal_cloud_is_in_view() {
        let cfg = ScenarioConfig::default();
        let sys = cfg.system().unwrap();
        let mut rng = trial_rng(1, 0);
        let start = crate::geom::PlantState {
            r: crate::geom::Rotation::from_yaw(0.7),
            ..crate::geom::PlantState::hover_at(Vector3::new(0.0, 0.0, 1.0))
        };
        let x0 = sys.nav_state(start).to_embedding();
        for l in frontal_cloud(&mut rng, &start.p, 0.7, cfg.camera.theta_max, 50) {
            assert!(crate::sensing::hard_visibility_embedding(&x0, l.as_slice(), &sys.camera));
        }
    }

    #[test]
    fn records_cover_all_methods() {
        let cfg = ScenarioConfig {
            grid: crate::harness::config::GridConfig { dt: 0.02, steps_per_interval: 3, intervals: 2 },
            timing: crate::harness::config::TimingConfig { landmark_counts: vec![2], repetitions: 2 },
            ..Default::default()
        };
        let recs = run_timing_experiment(&cfg).unwrap();
        assert_eq!(recs.len(), 4);
        assert!(recs.iter().all(|r| r.mean_ms > 0.0 && r.std_ms >= 0.0));
    }
}
