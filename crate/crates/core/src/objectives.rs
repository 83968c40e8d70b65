//! Trajectory-level planning objectives and their gradients with respect to
//! the piecewise-constant controls.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::System;
use crate::error::{Error, Result};
use crate::geom::TimeGrid;
use crate::linalg::symmetrize;
use crate::sensing::CoefficientFn;
use crate::siif::{run_trajectory, Bundling, IntervalContext, IntervalOptions, LandmarkMode, Landmarks, VisibilityMode};

/// Relative eigenvalue gap below which the smallest eigenvalue is treated as
/// repeated and its gradient is taken by finite differences.
pub const EIGEN_GAP_TOL: f64 = 1e-8;

/// Default prior covariance scale, `P₀ = 0.3·I`.
pub const DEFAULT_P0_SCALE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    PcExact,
    PcLie,
    PcLieCond,
    MaxVisibility,
    MaxGramian,
    Conventional,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 6] = [
        ObjectiveKind::PcExact,
        ObjectiveKind::PcLie,
        ObjectiveKind::PcLieCond,
        ObjectiveKind::MaxVisibility,
        ObjectiveKind::MaxGramian,
        ObjectiveKind::Conventional,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ObjectiveKind::PcExact => "pc-exact",
            ObjectiveKind::PcLie => "pc-lie",
            ObjectiveKind::PcLieCond => "pc-lie-cond",
            ObjectiveKind::MaxVisibility => "max-visibility",
            ObjectiveKind::MaxGramian => "max-gramian",
            ObjectiveKind::Conventional => "conventional",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective kind `{s}`")))
    }

    /// True for objectives that are maximized.
    pub fn maximizes(&self) -> bool {
        matches!(self, ObjectiveKind::MaxVisibility | ObjectiveKind::MaxGramian)
    }
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Rows of the error state picked out by an objective.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selector(pub Range<usize>);

impl Selector {
    pub fn position<Sy: System>(sys: &Sy) -> Self {
        Self(sys.position_error())
    }

    pub fn velocity<Sy: System>(sys: &Sy) -> Self {
        Self(sys.velocity_error())
    }

    /// `Y` as a dense `rows × n` selection matrix.
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.0.len(), n);
        for (i, c) in self.0.clone().enumerate() {
            y[(i, c)] = 1.0;
        }
        y
    }

    /// `Y M Yᵀ`
    pub fn block(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.0.len();
        m.view((self.0.start, self.0.start), (k, k)).into_owned()
    }
}

/// Weights of the conventional effort-plus-goal cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffortWeights {
    /// Diagonal weights on `u − u_hover`.
    pub control: Vec<f64>,
    /// Weight on the squared terminal goal distance.
    pub goal: f64,
}

impl Default for EffortWeights {
    fn default() -> Self {
        Self { control: vec![1.0, 10.0, 10.0, 10.0], goal: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Lie derivatives kept by the Lie-bundled objectives.
    pub r: usize,
    /// Prior covariance `P₀ = p0_scale·I`.
    pub p0_scale: f64,
    pub visibility: VisibilityMode,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self { kind, r: 3, p0_scale: DEFAULT_P0_SCALE, visibility: VisibilityMode::Smooth }
    }

    /// The reporting evaluator: explicit bundling, hard visibility.
    pub fn evaluation() -> Self {
        Self { visibility: VisibilityMode::Hard, ..Self::new(ObjectiveKind::PcExact) }
    }

    fn interval_options(&self) -> IntervalOptions {
        let (bundling, mode) = match self.kind {
            ObjectiveKind::PcExact => (Bundling::Explicit, LandmarkMode::Marginalize),
            ObjectiveKind::PcLieCond => (Bundling::Lie, LandmarkMode::Condition),
            _ => (Bundling::Lie, LandmarkMode::Marginalize),
        };
        IntervalOptions { bundling, mode, r: self.r, affine: true, visibility: self.visibility }
    }
}

/// A trajectory evaluation problem: system, grid, start, landmarks, goal.
#[derive(Clone)]
pub struct Problem<'a, Sy: System> {
    pub sys: &'a Sy,
    pub grid: TimeGrid,
    /// Start embedding.
    pub x0: Vec<f64>,
    pub landmarks: Vec<Vec<f64>>,
    /// Optional mass-coefficient model used instead of the points for
    /// information (visibility objectives still use the points).
    pub field: Option<Arc<CoefficientFn>>,
    pub goal: Vector3<f64>,
    pub effort: EffortWeights,
}

impl<'a, Sy: System> Problem<'a, Sy> {
    pub fn new(sys: &'a Sy, grid: TimeGrid, x0: Vec<f64>, landmarks: Vec<Vec<f64>>, goal: Vector3<f64>) -> Self {
        Self { sys, grid, x0, landmarks, field: None, goal, effort: EffortWeights::default() }
    }

    fn info_landmarks(&self) -> Landmarks<'_> {
        match &self.field {
            Some(f) => Landmarks::Field(f.as_ref()),
            None => Landmarks::rows(&self.landmarks),
        }
    }

    pub fn hover_controls(&self) -> Vec<Vec<f64>> {
        vec![self.sys.hover_control(); self.grid.intervals]
    }

    fn check_controls(&self, controls: &[Vec<f64>]) -> Result<()> {
        let m = self.sys.dims().ctrl;
        if controls.len() != self.grid.intervals || controls.iter().any(|u| u.len() != m) {
            return Err(Error::InvalidInput(format!(
                "expected {} controls of length {m}, got {}",
                self.grid.intervals,
                controls.len()
            )));
        }
        if controls.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite control".into()));
        }
        Ok(())
    }
}

/// Outcome of evaluating an objective.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub value: f64,
    /// Position covariance trace after each interval (pc objectives).
    pub traces: Vec<f64>,
    /// Visibility weight at each interval start.
    pub visibility: Vec<f64>,
    pub gradient: Option<Vec<f64>>,
    /// First interval whose information could not be inverted.
    pub singular_interval: Option<usize>,
}

pub fn flatten(controls: &[Vec<f64>]) -> Vec<f64> {
    controls.iter().flatten().copied().collect()
}

pub fn unflatten(theta: &[f64], m: usize) -> Vec<Vec<f64>> {
    theta.chunks(m).map(|c| c.to_vec()).collect()
}

/// Evaluates an objective, optionally with its analytic gradient.
pub fn evaluate<Sy: System>(
    problem: &Problem<Sy>,
    controls: &[Vec<f64>],
    spec: &ObjectiveSpec,
    grad: bool,
) -> Result<CostReport> {
    problem.check_controls(controls)?;
    match spec.kind {
        ObjectiveKind::PcExact | ObjectiveKind::PcLie | ObjectiveKind::PcLieCond => {
            eval_pc(problem, controls, spec, grad)
        }
        ObjectiveKind::MaxVisibility => eval_max_visibility(problem, controls, grad),
        ObjectiveKind::MaxGramian => eval_max_gramian(problem, controls, spec, grad),
        ObjectiveKind::Conventional => eval_conventional(problem, controls, grad),
    }
}

fn context<'a, Sy: System>(problem: &Problem<'a, Sy>, options: IntervalOptions) -> Result<IntervalContext<'a, Sy>> {
    IntervalContext::new(problem.sys, problem.grid.dt, problem.grid.steps_per_interval, options)
}

/// `J = Σ tr(Y P_k Yᵀ)` over interval ends with `P_k = S_k⁻¹`.
pub fn eval_pc<Sy: System>(
    problem: &Problem<Sy>,
    controls: &[Vec<f64>],
    spec: &ObjectiveSpec,
    grad: bool,
) -> Result<CostReport> {
    let sys = problem.sys;
    let n = sys.dims().err;
    if !(spec.p0_scale > 0.0) {
        return Err(Error::InvalidInput(format!("P₀ scale must be positive, got {}", spec.p0_scale)));
    }
    let ctx = context(problem, spec.interval_options())?;
    let s0 = DMatrix::identity(n, n) / spec.p0_scale;
    let run = run_trajectory(&ctx, &problem.x0, controls, &s0, &problem.info_landmarks(), grad)?;
    let sel = Selector::position(sys);
    let mut report = CostReport { visibility: run.visible.clone(), ..Default::default() };
    let mut weights = Vec::with_capacity(run.infos.len());
    for (i, s) in run.infos.iter().enumerate() {
        let Some(ch) = symmetrize(s).cholesky() else {
            report.value = f64::INFINITY;
            report.singular_interval = Some(i);
            return Ok(report);
        };
        let p = ch.inverse();
        let py = p.columns(sel.0.start, sel.0.len()).into_owned();
        let trace = sel.block(&p).trace();
        report.traces.push(trace);
        report.value += trace;
        // ∂tr(Y P Yᵀ)/∂S = −P YᵀY P
        weights.push(-(&py * py.transpose()));
    }
    if let Some(g) = run.grad {
        let n_theta = controls.len() * sys.dims().ctrl;
        let grad: Vec<f64> = (0..n_theta)
            .map(|k| g.ds.iter().zip(&weights).map(|(ds, w)| ds[k].dot(w)).sum())
            .collect();
        report.gradient = Some(grad);
    }
    Ok(report)
}

/// `Σ_k Σ_n σ(x(t_k); ℓ_n)` over interval end states.
pub fn eval_max_visibility<Sy: System>(problem: &Problem<Sy>, controls: &[Vec<f64>], grad: bool) -> Result<CostReport> {
    let ctx = context(problem, IntervalOptions::default())?.without_information();
    let run = run_trajectory(&ctx, &problem.x0, controls, &empty_info(problem), &Landmarks::rows(&problem.landmarks), grad)?;
    let value = run.end_visibility.iter().sum();
    let gradient = run.grad.map(|g| {
        let n_theta = controls.len() * problem.sys.dims().ctrl;
        (0..n_theta).map(|k| g.dend_visibility.iter().map(|v| v[k]).sum()).collect()
    });
    Ok(CostReport { value, visibility: run.end_visibility, gradient, ..Default::default() })
}

fn empty_info<Sy: System>(problem: &Problem<Sy>) -> DMatrix<f64> {
    let n = problem.sys.dims().err;
    DMatrix::zeros(n, n)
}

/// Smallest eigenvalue of the accumulated velocity-block information
/// `Σ_k Y_v [Λ^Z_k]_{e₀e₀} Y_vᵀ` (pure measurement information, zero prior).
pub fn eval_max_gramian<Sy: System>(
    problem: &Problem<Sy>,
    controls: &[Vec<f64>],
    spec: &ObjectiveSpec,
    grad: bool,
) -> Result<CostReport> {
    let sys = problem.sys;
    let spec_lie = ObjectiveSpec { kind: ObjectiveKind::PcLie, ..spec.clone() };
    let ctx = context(problem, spec_lie.interval_options())?;
    let run = run_trajectory(&ctx, &problem.x0, controls, &empty_info(problem), &problem.info_landmarks(), grad)?;
    let sel = Selector::velocity(sys);
    let mut acc = DMatrix::zeros(sel.0.len(), sel.0.len());
    for info in &run.info_e0 {
        acc += sel.block(info);
    }
    let eig = symmetrize(&acc).symmetric_eigen();
    let (imin, value) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if *v < best.1 { (i, *v) } else { best });
    let mut report = CostReport { value, visibility: run.visible.clone(), ..Default::default() };
    if let Some(g) = run.grad {
        let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        let gap = eig
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != imin)
            .map(|(_, v)| (v - value).abs())
            .fold(f64::INFINITY, f64::min);
        if gap <= EIGEN_GAP_TOL * scale {
            log::warn!("repeated smallest eigenvalue in the velocity information; using finite differences");
            let spec_v = spec.clone();
            report.gradient = Some(finite_difference(problem, controls, &|c| {
                eval_max_gramian(problem, c, &spec_v, false).map(|r| r.value)
            })?);
        } else {
            let v = eig.eigenvectors.column(imin).into_owned();
            let n_theta = controls.len() * sys.dims().ctrl;
            let grad = (0..n_theta)
                .map(|k| {
                    g.dinfo_e0
                        .iter()
                        .map(|d| {
                            let b = sel.block(&d[k]);
                            (v.transpose() * b * &v)[(0, 0)]
                        })
                        .sum()
                })
                .collect();
            report.gradient = Some(grad);
        }
    }
    Ok(report)
}

/// `Δt·K·Σ_k (u_k − u_hover)ᵀ W (u_k − u_hover) + w_g‖p(T) − p_goal‖²`.
pub fn eval_conventional<Sy: System>(problem: &Problem<Sy>, controls: &[Vec<f64>], grad: bool) -> Result<CostReport> {
    let sys = problem.sys;
    let d = sys.dims();
    let w = &problem.effort;
    if w.control.len() != d.ctrl {
        return Err(Error::InvalidInput(format!("need {} control weights, got {}", d.ctrl, w.control.len())));
    }
    let hover = sys.hover_control();
    let span = problem.grid.dt * problem.grid.steps_per_interval as f64;
    let mut value = 0.0;
    let mut gradient = vec![0.0; controls.len() * d.ctrl];
    for (i, u) in controls.iter().enumerate() {
        for c in 0..d.ctrl {
            let du = u[c] - hover[c];
            value += span * w.control[c] * du * du;
            gradient[i * d.ctrl + c] = 2.0 * span * w.control[c] * du;
        }
    }
    if w.goal != 0.0 {
        let ctx = context(problem, IntervalOptions::default())?.without_information();
        let run = run_trajectory(&ctx, &problem.x0, controls, &empty_info(problem), &Landmarks::none(), grad)?;
        let pr = sys.position_embedding();
        let end = run.states.last().expect("final state");
        let miss: Vec<f64> = pr.clone().enumerate().map(|(i, j)| end[j] - problem.goal[i]).collect();
        value += w.goal * miss.iter().map(|m| m * m).sum::<f64>();
        if let Some(g) = run.grad {
            // plant-tangent position coordinates coincide with the position error rows
            let pe = sys.position_error();
            for (k, gk) in gradient.iter_mut().enumerate() {
                for (i, row) in pe.clone().enumerate() {
                    *gk += 2.0 * w.goal * miss[i] * g.dx_final[(row, k)];
                }
            }
        }
    }
    Ok(CostReport { value, gradient: grad.then_some(gradient), ..Default::default() })
}

/// Central differences with relative per-coordinate step `1e-5`.
pub fn finite_difference<Sy: System>(
    problem: &Problem<Sy>,
    controls: &[Vec<f64>],
    f: &dyn Fn(&[Vec<f64>]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let m = problem.sys.dims().ctrl;
    let theta = flatten(controls);
    let mut g = vec![0.0; theta.len()];
    for k in 0..theta.len() {
        let h = 1e-5 * theta[k].abs().max(1.0);
        let mut tp = theta.clone();
        tp[k] += h;
        let mut tm = theta.clone();
        tm[k] -= h;
        g[k] = (f(&unflatten(&tp, m))? - f(&unflatten(&tm, m))?) / (2.0 * h);
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    Analytic,
    FiniteDiff,
}

/// Gradient of an objective with respect to the flattened controls.
pub fn gradient<Sy: System>(
    problem: &Problem<Sy>,
    controls: &[Vec<f64>],
    spec: &ObjectiveSpec,
    mode: GradientMode,
) -> Result<Vec<f64>> {
    match mode {
        GradientMode::Analytic => Ok(evaluate(problem, controls, spec, true)?.gradient.unwrap_or_default()),
        GradientMode::FiniteDiff => {
            finite_difference(problem, controls, &|c| evaluate(problem, c, spec, false).map(|r| r.value))
        }
    }
}


#[cfg(test)]
mod quad_tests {
    use super::*;
    use crate::dynamics::{DynamicsParams, Quadrotor};
    use crate::geom::PlantState;
    use crate::sensing::OrthoCamera;
    use rand::{Rng, SeedableRng};

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let sys = Quadrotor::new(DynamicsParams::default(), OrthoCamera::forward(0.8, 0.02).unwrap()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let plant = PlantState { v: Vector3::new(1.0, 0.2, 0.0), ..PlantState::hover_at(Vector3::new(0.0, 0.0, 1.0)) };
        let lms: Vec<Vec<f64>> = (0..15)
            .map(|_| vec![rng.gen_range(3.0..9.0), rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..3.0)])
            .collect();
        let grid = TimeGrid::new(0.02, 4, 3).unwrap();
        let p = Problem::new(&sys, grid, sys.nav_state(plant).to_embedding(), lms, Vector3::new(1.0, 0.5, 1.0));
        let controls: Vec<Vec<f64>> = (0..3)
            .map(|_| vec![9.81 + rng.gen_range(-0.5..0.5), rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02)])
            .collect();
        for kind in ObjectiveKind::ALL {
            let spec = ObjectiveSpec::new(kind);
            let an = gradient(&p, &controls, &spec, GradientMode::Analytic).unwrap();
            let fd = gradient(&p, &controls, &spec, GradientMode::FiniteDiff).unwrap();
            let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (a, f) in an.iter().zip(&fd) {
                assert!((a - f).abs() <= 1e-4 * scale.max(1e-12), "{kind}: {a} vs {f} (scale {scale})");
            }
        }
    }
}
