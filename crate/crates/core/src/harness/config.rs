//! Scenario configuration: TOML with dotted sections, every field defaulted.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsParams, Quadrotor};
use crate::error::{Error, Result};
use crate::geom::TimeGrid;
use crate::objectives::{EffortWeights, ObjectiveKind};
use crate::refine::{ControlBounds, SolverSettings};
use crate::sensing::OrthoCamera;

/// The documented default configuration shipped with the crate.
pub const TEMPLATE: &str = include_str!("../../config/default.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub trials: usize,
    pub grid: GridConfig,
    pub landmarks: LandmarkConfig,
    pub start: StartConfig,
    pub dynamics: DynamicsConfig,
    pub camera: CameraConfig,
    pub filter: FilterConfig,
    pub effort: EffortConfig,
    pub bounds: BoundsConfig,
    pub solver: SolverSettings,
    pub pareto: ParetoConfig,
    pub bundling: BundlingConfig,
    pub timing: TimingConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dt: f64,
    pub steps_per_interval: usize,
    pub intervals: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandmarkConfig {
    pub count: usize,
    pub box_min: [f64; 3],
    pub box_max: [f64; 3],
    /// Optional table of landmarks (`x y z` per row) used instead of sampling.
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartConfig {
    pub box_min: [f64; 3],
    pub box_max: [f64; 3],
    /// Horizontal start-to-goal distance range (m).
    pub goal_distance: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub inertia: [f64; 3],
    pub gravity: f64,
    pub sigma_eta_a: f64,
    pub sigma_eta_tau: f64,
    pub sigma_nu_a: f64,
    pub sigma_nu_w: f64,
    pub sigma_ba_walk: f64,
    pub sigma_bw_walk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub theta_max: f64,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub p0_scale: f64,
    pub lie_order: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffortConfig {
    pub control: Vec<f64>,
    pub goal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    /// Thrust range as multiples of the hover thrust.
    pub thrust: [f64; 2],
    /// Symmetric torque limit (N·m).
    pub torque: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParetoConfig {
    pub objectives: Vec<String>,
    pub rho: Vec<f64>,
    /// Violation threshold as a multiple of the initial position trace.
    pub safety_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BundlingConfig {
    pub steps: Vec<usize>,
    /// Nominal world velocity at the interval start (m/s).
    pub velocity: [f64; 3],
    /// Nominal body rate at the interval start (rad/s).
    pub omega: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub landmark_counts: Vec<usize>,
    pub repetitions: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            trials: 50,
            grid: GridConfig::default(),
            landmarks: LandmarkConfig::default(),
            start: StartConfig::default(),
            dynamics: DynamicsConfig::default(),
            camera: CameraConfig::default(),
            filter: FilterConfig::default(),
            effort: EffortConfig::default(),
            bounds: BoundsConfig::default(),
            solver: SolverSettings { max_inner: 15, max_outer: 5, ..SolverSettings::default() },
            pareto: ParetoConfig::default(),
            bundling: BundlingConfig::default(),
            timing: TimingConfig::default(),
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dt: 0.02, steps_per_interval: 7, intervals: 11 }
    }
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self { count: 30, box_min: [-8.0, -8.0, 0.0], box_max: [8.0, 8.0, 3.0], file: None }
    }
}

impl Default for StartConfig {
    fn default() -> Self {
        Self { box_min: [-1.0, -1.0, 0.8], box_max: [1.0, 1.0, 1.2], goal_distance: [1.0, 2.0] }
    }
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        let d = DynamicsParams::default();
        Self {
            inertia: [d.inertia[(0, 0)], d.inertia[(1, 1)], d.inertia[(2, 2)]],
            gravity: -d.gravity.z,
            sigma_eta_a: d.sigma_eta_a,
            sigma_eta_tau: d.sigma_eta_tau,
            sigma_nu_a: d.sigma_nu_a,
            sigma_nu_w: d.sigma_nu_w,
            sigma_ba_walk: d.sigma_ba_walk,
            sigma_bw_walk: d.sigma_bw_walk,
        }
    }
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { theta_max: 0.8, noise_std: 0.02 }
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { p0_scale: 0.3, lie_order: 3 }
    }
}

impl Default for EffortConfig {
    fn default() -> Self {
        let w = EffortWeights::default();
        Self { control: w.control, goal: w.goal }
    }
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self { thrust: [0.5, 1.5], torque: 0.05 }
    }
}

impl Default for ParetoConfig {
    fn default() -> Self {
        Self {
            objectives: ["pc-exact", "pc-lie", "pc-lie-cond", "max-visibility", "max-gramian"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            rho: vec![0.05, 0.10, 0.25],
            safety_factor: 3.0,
        }
    }
}

impl Default for BundlingConfig {
    fn default() -> Self {
        Self { steps: (2..=14).collect(), velocity: [1.0, 0.3, 0.0], omega: [0.1, -0.2, 0.3] }
    }
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { landmark_counts: vec![10, 20, 50, 100], repetitions: 10 }
    }
}

fn ordered_box(min: &[f64; 3], max: &[f64; 3]) -> bool {
    min.iter().zip(max).all(|(a, b)| a.is_finite() && b.is_finite() && a < b)
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // landmark tables are resolved relative to the config file
        if let (Some(file), Some(dir)) = (cfg.landmarks.file.as_mut(), path.parent()) {
            if file.is_relative() {
                *file = dir.join(&*file);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.grid()?;
        if self.landmarks.count > 0 && self.landmarks.file.is_none() && !ordered_box(&self.landmarks.box_min, &self.landmarks.box_max) {
            return bad("landmarks.box_min must be strictly below landmarks.box_max");
        }
        if !ordered_box(&self.start.box_min, &self.start.box_max) {
            return bad("start.box_min must be strictly below start.box_max");
        }
        let [g0, g1] = self.start.goal_distance;
        if !(g0 >= 0.0 && g0 <= g1 && g1.is_finite()) {
            return bad("start.goal_distance must be an ordered non-negative range");
        }
        if !(self.filter.p0_scale > 0.0 && self.filter.p0_scale.is_finite()) {
            return bad("filter.p0_scale must be positive");
        }
        crate::dynamics::jet::check_order(self.filter.lie_order).map_err(|e| Error::Config(e.to_string()))?;
        if self.effort.control.len() != 4 || self.effort.control.iter().any(|w| !(*w >= 0.0)) || !(self.effort.goal >= 0.0) {
            return bad("effort.control needs four non-negative weights and effort.goal must be non-negative");
        }
        let [t0, t1] = self.bounds.thrust;
        if !(0.0 <= t0 && t0 < 1.0 && 1.0 < t1 && t1.is_finite()) || !(self.bounds.torque > 0.0) {
            return bad("bounds.thrust must bracket 1 (hover) and bounds.torque must be positive");
        }
        self.objective_kinds()?;
        if self.pareto.rho.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return bad("pareto.rho values must be finite and non-negative");
        }
        if !(self.pareto.safety_factor > 0.0) {
            return bad("pareto.safety_factor must be positive");
        }
        if self.bundling.steps.iter().any(|k| *k == 0) {
            return bad("bundling.steps must be positive");
        }
        if self.timing.repetitions == 0 {
            return bad("timing.repetitions must be positive");
        }
        self.dynamics_params()?.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.camera()?;
        let s = &self.solver;
        if s.memory == 0 || !(s.penalty_growth > 1.0) || !(s.initial_penalty > 0.0) || !(s.grad_tol > 0.0) {
            return bad("solver needs memory ≥ 1, penalty_growth > 1, positive initial_penalty and grad_tol");
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.dt, self.grid.steps_per_interval, self.grid.intervals)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn dynamics_params(&self) -> Result<DynamicsParams> {
        let d = &self.dynamics;
        Ok(DynamicsParams {
            inertia: Matrix3::from_diagonal(&Vector3::from(d.inertia)),
            gravity: Vector3::new(0.0, 0.0, -d.gravity),
            sigma_eta_a: d.sigma_eta_a,
            sigma_eta_tau: d.sigma_eta_tau,
            sigma_nu_a: d.sigma_nu_a,
            sigma_nu_w: d.sigma_nu_w,
            sigma_ba_walk: d.sigma_ba_walk,
            sigma_bw_walk: d.sigma_bw_walk,
        })
    }

    pub fn camera(&self) -> Result<OrthoCamera> {
        OrthoCamera::forward(self.camera.theta_max, self.camera.noise_std).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn system(&self) -> Result<Quadrotor> {
        Quadrotor::new(self.dynamics_params()?, self.camera()?)
    }

    pub fn effort_weights(&self) -> EffortWeights {
        EffortWeights { control: self.effort.control.clone(), goal: self.effort.goal }
    }

    pub fn control_bounds(&self, hover_thrust: f64) -> ControlBounds {
        let [t0, t1] = self.bounds.thrust;
        let tq = self.bounds.torque;
        ControlBounds { lower: vec![t0 * hover_thrust, -tq, -tq, -tq], upper: vec![t1 * hover_thrust, tq, tq, tq] }
    }

    pub fn objective_kinds(&self) -> Result<Vec<ObjectiveKind>> {
        self.pareto
            .objectives
            .iter()
            .map(|s| match ObjectiveKind::from_label(s) {
                Ok(ObjectiveKind::Conventional) => {
                    Err(Error::Config("conventional is the baseline, not a refinement objective".into()))
                }
                Ok(k) => Ok(k),
                Err(e) => Err(Error::Config(e.to_string())),
            })
            .collect()
    }

    /// Position-covariance trace of the start prior.
    pub fn initial_position_trace(&self) -> f64 {
        3.0 * self.filter.p0_scale
    }

    pub fn safety_threshold(&self) -> f64 {
        self.pareto.safety_factor * self.initial_position_trace()
    }
}
