//! Local trajectory refinement: a box-constrained limited-memory
//! quasi-Newton solver, the effort-minimizing baseline, and an augmented
//! Lagrangian loop that trades effort budget for a planning objective.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dynamics::System;
use crate::error::{Error, Result};
use crate::objectives::{
    evaluate, flatten, unflatten, CostReport, ObjectiveKind, ObjectiveSpec, Problem,
};

/// Slack on the effort budget when judging feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Bisection steps when pulling an infeasible iterate back onto the budget.
const RESTORE_BISECTIONS: usize = 30;

/// Per-channel control bounds, applied to every interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidInput("control bounds must be non-empty boxes".into()));
        }
        Ok(Self { lower, upper })
    }

    /// Thrust in `[0.5g, 1.5g]` and torques within `±0.05`.
    pub fn quadrotor_default(hover_thrust: f64) -> Self {
        Self { lower: vec![0.5 * hover_thrust, -0.05, -0.05, -0.05], upper: vec![1.5 * hover_thrust, 0.05, 0.05, 0.05] }
    }

    fn expand(&self, intervals: usize) -> (Vec<f64>, Vec<f64>) {
        let lo = (0..intervals).flat_map(|_| self.lower.iter().copied()).collect();
        let hi = (0..intervals).flat_map(|_| self.upper.iter().copied()).collect();
        (lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Iteration cap of the baseline solve.
    pub baseline_iters: usize,
    /// Projected-gradient tolerance of the baseline solve.
    pub grad_tol: f64,
    /// Augmented Lagrangian outer iterations.
    pub max_outer: usize,
    /// Inner quasi-Newton iterations per outer iteration.
    pub max_inner: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    /// Stored curvature pairs.
    pub memory: usize,
    pub max_shrinks: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            baseline_iters: 500,
            grad_tol: 1e-6,
            max_outer: 20,
            max_inner: 40,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            memory: 8,
            max_shrinks: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoxResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖P(x − g) − x‖∞`
fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((xi, gi), (l, h))| ((xi - gi).clamp(*l, *h) - xi).abs())
        .fold(0.0, f64::max)
}

/// Minimizes `f` over a box with projected L-BFGS and an Armijo backtracking
/// search along the projected path. `f(x, true)` must return a gradient.
pub fn minimize_box(
    f: &mut dyn FnMut(&[f64], bool) -> Result<(f64, Option<Vec<f64>>)>,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_iters: usize,
    tol: f64,
    settings: &SolverSettings,
) -> Result<BoxResult> {
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, g) = f(&x, true)?;
    let mut g = g.expect("gradient requested");
    if !fx.is_finite() {
        return Err(Error::NonFinite { step: 0, what: "objective at the starting point".into() });
    }
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        if projected_gradient_norm(&x, &g, lo, hi) <= tol {
            converged = true;
            break;
        }
        iterations += 1;
        // free variables: not pinned at a bound by the gradient
        let free: Vec<bool> = (0..x.len())
            .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        let mut q: Vec<f64> = g.iter().zip(&free).map(|(gi, f)| if *f { *gi } else { 0.0 }).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y) in pairs.iter().rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((a, rho));
        }
        if let Some((s, y)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y), (a, rho)) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.iter().zip(&free).map(|(v, f)| if *f { -v } else { 0.0 }).collect();
        if dot(&d, &g) >= 0.0 {
            d = g.iter().zip(&free).map(|(gi, f)| if *f { -gi } else { 0.0 }).collect();
            pairs.clear();
        }
        // first step of a pure gradient direction is scaled to unit length
        let mut alpha = if pairs.is_empty() { 1.0 / d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..=settings.max_shrinks {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            project(&mut xn, lo, hi);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let (fn_, _) = f(&xn, false)?;
            if fn_.is_finite() && fn_ <= fx + 1e-4 * dot(&g, &step) {
                accepted = Some((xn, fn_, step));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_, step)) = accepted else {
            log::debug!("line search failed after {} shrinks", settings.max_shrinks);
            break;
        };
        let (fcheck, gn) = f(&xn, true)?;
        debug_assert!(fcheck == fn_ || !fcheck.is_finite() || (fcheck - fn_).abs() <= 1e-9 * fn_.abs().max(1.0));
        let gn = gn.expect("gradient requested");
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&step, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&step, &step).sqrt() {
            pairs.push_back((step.clone(), y));
            if pairs.len() > settings.memory {
                pairs.pop_front();
            }
        }
        let decrease = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        if decrease.abs() <= 1e-14 * fx.abs().max(1.0) && step.iter().all(|v| v.abs() <= 1e-14) {
            break;
        }
    }
    if !converged && projected_gradient_norm(&x, &g, lo, hi) <= tol {
        converged = true;
    }
    Ok(BoxResult { x, f: fx, iterations, converged })
}

/// A refinement instance.
#[derive(Clone)]
pub struct RefinementProblem<'a, Sy: System> {
    pub problem: Problem<'a, Sy>,
    pub bounds: ControlBounds,
    /// Allowed relative increase of the effort cost.
    pub rho: f64,
    pub objective: ObjectiveSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub controls: Vec<Vec<f64>>,
    pub jc_baseline: f64,
    pub jc_final: f64,
    pub jobs_initial: f64,
    pub jobs_final: f64,
    pub iterations: usize,
    pub converged: bool,
    /// False when no feasible iterate improved on the starting point.
    pub improved: bool,
    /// Reporting evaluation of the returned controls.
    pub report: CostReport,
}

/// Largest step from the feasible `anchor` toward `target` that keeps the
/// effort within budget, found by bisection, with its signed objective.
fn restore<Sy: System>(
    problem: &Problem<Sy>,
    spec: &ObjectiveSpec,
    anchor: &[f64],
    target: &[f64],
    budget: f64,
) -> Result<Option<(Vec<f64>, f64)>> {
    let point = |t: f64| -> Vec<f64> { anchor.iter().zip(target).map(|(a, b)| a + t * (b - a)).collect() };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..RESTORE_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if effort(problem, &point(mid), false)?.0 <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return Ok(None);
    }
    let x = point(lo);
    let (f, _) = signed_objective(problem, spec, &x, false)?;
    Ok(Some((x, f)))
}

fn effort<Sy: System>(problem: &Problem<Sy>, theta: &[f64], grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let m = problem.sys.dims().ctrl;
    let r = evaluate(problem, &unflatten(theta, m), &ObjectiveSpec::new(ObjectiveKind::Conventional), grad)?;
    Ok((r.value, r.gradient))
}

/// Controls minimizing the effort-plus-goal cost, started from hover.
pub fn baseline_solve<Sy: System>(
    problem: &Problem<Sy>,
    bounds: &ControlBounds,
    settings: &SolverSettings,
) -> Result<Vec<Vec<f64>>> {
    let m = problem.sys.dims().ctrl;
    if bounds.lower.len() != m {
        return Err(Error::InvalidInput(format!("bounds need {m} channels")));
    }
    let (lo, hi) = bounds.expand(problem.grid.intervals);
    let x0 = flatten(&problem.hover_controls());
    let mut f = |x: &[f64], g: bool| effort(problem, x, g);
    let res = minimize_box(&mut f, &x0, &lo, &hi, settings.baseline_iters, settings.grad_tol, settings)?;
    Ok(unflatten(&res.x, m))
}

/// Signed objective that is minimized: maximized kinds are negated.
fn signed_objective<Sy: System>(
    problem: &Problem<Sy>,
    spec: &ObjectiveSpec,
    theta: &[f64],
    grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let m = problem.sys.dims().ctrl;
    let r = evaluate(problem, &unflatten(theta, m), spec, grad)?;
    let sign = if spec.kind.maximizes() { -1.0 } else { 1.0 };
    Ok((sign * r.value, r.gradient.map(|g| g.into_iter().map(|v| sign * v).collect())))
}

/// Minimizes the objective subject to `J_c ≤ (1+ρ)·J_c,base` and the control
/// box, starting from `start` (the baseline or a warm start). Returns the best
/// feasible iterate; the start itself when nothing better is found.
pub fn refine<Sy: System>(
    rp: &RefinementProblem<Sy>,
    baseline: &[Vec<f64>],
    start: Option<&[Vec<f64>]>,
    settings: &SolverSettings,
) -> Result<SolveResult> {
    if !(rp.rho >= 0.0) {
        return Err(Error::InvalidInput(format!("ρ must be non-negative, got {}", rp.rho)));
    }
    let problem = &rp.problem;
    let m = problem.sys.dims().ctrl;
    let (lo, hi) = rp.bounds.expand(problem.grid.intervals);
    let theta_base = flatten(baseline);
    let (jc_base, _) = effort(problem, &theta_base, false)?;
    let budget = (1.0 + rp.rho) * jc_base;
    let c_scale = jc_base.abs().max(1e-3);
    let spec = &rp.objective;

    let (f_base, _) = signed_objective(problem, spec, &theta_base, false)?;
    let mut best = (theta_base.clone(), f_base);
    if let Some(s) = start {
        let ts = flatten(s);
        let (jc, _) = effort(problem, &ts, false)?;
        let (fs, _) = signed_objective(problem, spec, &ts, false)?;
        if jc <= budget + FEASIBILITY_TOL && fs < best.1 {
            best = (ts, fs);
        }
    }
    let f_scale = best.1.abs().max(1e-9);
    let mut iterations = 0;
    let mut converged = false;

    if rp.rho > 0.0 {
        let mut x = best.0.clone();
        let mut lambda = 0.0;
        let mut mu = settings.initial_penalty;
        let mut last_violation = f64::INFINITY;
        let unconstrained = rp.rho.is_infinite();
        for _outer in 0..settings.max_outer {
            let mut f = |t: &[f64], g: bool| -> Result<(f64, Option<Vec<f64>>)> {
                let (fo, go) = signed_objective(problem, spec, t, g)?;
                let mut val = fo / f_scale;
                let mut grad = go.map(|v| v.into_iter().map(|x| x / f_scale).collect::<Vec<_>>());
                if !unconstrained {
                    let (jc, gc) = effort(problem, t, g)?;
                    let c = (jc - budget) / c_scale;
                    let shifted = c + lambda / mu;
                    if shifted > 0.0 {
                        val += 0.5 * mu * shifted * shifted - lambda * lambda / (2.0 * mu);
                        if let (Some(gr), Some(gc)) = (grad.as_mut(), gc) {
                            for (a, b) in gr.iter_mut().zip(gc) {
                                *a += mu * shifted * b / c_scale;
                            }
                        }
                    } else {
                        val -= lambda * lambda / (2.0 * mu);
                    }
                }
                Ok((val, grad))
            };
            let res = minimize_box(&mut f, &x, &lo, &hi, settings.max_inner, settings.grad_tol, settings)?;
            iterations += res.iterations;
            x = res.x;
            let (jc, _) = effort(problem, &x, false)?;
            let (fx, _) = signed_objective(problem, spec, &x, false)?;
            let violation = (jc - budget).max(0.0);
            if violation <= FEASIBILITY_TOL {
                if fx < best.1 {
                    best = (x.clone(), fx);
                }
            } else if let Some((xr, fr)) = restore(problem, spec, &best.0, &x, budget)? {
                if fr < best.1 {
                    best = (xr, fr);
                }
            }
            if unconstrained {
                converged = res.converged;
                break;
            }
            let c = (jc - budget) / c_scale;
            lambda = (lambda + mu * c).max(0.0);
            if violation <= FEASIBILITY_TOL && res.converged {
                converged = true;
                break;
            }
            if violation > 0.25 * last_violation {
                mu *= settings.penalty_growth;
            }
            last_violation = violation;
        }
    } else {
        converged = true;
    }

    let improved = best.1 < f_base;
    let controls = unflatten(&best.0, m);
    let (jc_final, _) = effort(problem, &best.0, false)?;
    let report = evaluate(problem, &controls, &ObjectiveSpec::evaluation(), false)?;
    let sign = if spec.kind.maximizes() { -1.0 } else { 1.0 };
    Ok(SolveResult {
        controls,
        jc_baseline: jc_base,
        jc_final,
        jobs_initial: sign * f_base,
        jobs_final: sign * best.1,
        iterations,
        converged,
        improved,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearSystem;
    use crate::geom::TimeGrid;
    use nalgebra::{DMatrix, Vector3};

    #[test]
    fn box_solver_on_quadratic() {
        let mut f = |x: &[f64], g: bool| -> Result<(f64, Option<Vec<f64>>)> {
            let v = (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2);
            Ok((v, g.then(|| vec![2.0 * (x[0] - 3.0), 20.0 * (x[1] + 1.0)])))
        };
        let s = SolverSettings::default();
        let r = minimize_box(&mut f, &[0.0, 0.0], &[-5.0, -0.5], &[2.0, 5.0], 100, 1e-9, &s).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-9 && (r.x[1] + 0.5).abs() < 1e-9);
        assert!(r.converged);
    }

    fn double_integrator() -> LinearSystem {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let mut sys = LinearSystem::new(a, b, DMatrix::identity(2, 2), DMatrix::zeros(1, 2), DMatrix::zeros(1, 1));
        sys.position = 0..1;
        sys.velocity = 1..2;
        sys
    }

    #[test]
    fn goal_at_start_gives_hover() {
        let sys = LinearSystem::toy_1d();
        let mut p = Problem::new(&sys, TimeGrid::new(0.1, 2, 4).unwrap(), vec![0.0], Vec::new(), Vector3::zeros());
        p.effort.control = vec![1.0];
        let b = ControlBounds::new(vec![-1.0], vec![1.0]).unwrap();
        let u = baseline_solve(&p, &b, &SolverSettings::default()).unwrap();
        assert!(u.iter().all(|c| c[0].abs() < 1e-9));
    }

    #[test]
    fn double_integrator_matches_min_effort_polynomial() {
        // min ∫u² + w‖x(T) − g‖² with piecewise-constant u approaches the
        // cubic rest-to-position solution as the goal weight grows
        let sys = double_integrator();
        let grid = TimeGrid::new(0.01, 5, 40).unwrap();
        let mut p = Problem::new(&sys, grid, vec![0.0, 0.0], Vec::new(), Vector3::new(1.0, 0.0, 0.0));
        p.effort.control = vec![1.0];
        p.effort.goal = 1e6;
        let b = ControlBounds::new(vec![-100.0], vec![100.0]).unwrap();
        let s = SolverSettings { baseline_iters: 2000, grad_tol: 1e-9, ..Default::default() };
        let u = baseline_solve(&p, &b, &s).unwrap();
        // closed form with free end velocity: u(t) = 3(T − t)/T³ for unit distance
        let t_end: f64 = 2.0;
        let mut x = 0.0;
        let mut v = 0.0;
        for ui in &u {
            x += v * 0.05 + 0.5 * ui[0] * 0.05 * 0.05;
            v += ui[0] * 0.05;
        }
        assert!((x - 1.0).abs() < 0.01, "endpoint {x}");
        let expected_first = 3.0 * (t_end - 0.025) / t_end.powi(3);
        assert!((u[0][0] - expected_first).abs() < 0.01 * expected_first.abs() + 0.01, "{} vs {expected_first}", u[0][0]);
    }

    #[test]
    fn baseline_independent_of_initial_scaling() {
        let sys = double_integrator();
        let grid = TimeGrid::new(0.05, 2, 10).unwrap();
        let mut p = Problem::new(&sys, grid, vec![0.0, 0.0], Vec::new(), Vector3::new(0.5, 0.0, 0.0));
        p.effort.control = vec![1.0];
        let b = ControlBounds::new(vec![-50.0], vec![50.0]).unwrap();
        let s = SolverSettings { grad_tol: 1e-10, baseline_iters: 2000, ..Default::default() };
        let (lo, hi) = b.expand(10);
        let mut f = |x: &[f64], g: bool| effort(&p, x, g);
        let a = minimize_box(&mut f, &vec![0.0; 10], &lo, &hi, 2000, 1e-10, &s).unwrap();
        let c = minimize_box(&mut f, &vec![20.0; 10], &lo, &hi, 2000, 1e-10, &s).unwrap();
        for (x, y) in a.x.iter().zip(&c.x) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}
