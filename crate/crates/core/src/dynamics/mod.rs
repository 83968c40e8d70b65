//! Quadrotor plant, IMU-driven error dynamics, their first-order
//! discretization and the Lie-derivative engine.

pub(crate) mod jet;
mod quadrotor;
mod system;

pub use jet::*;
pub use quadrotor::*;
pub use system::*;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{ControlInput, NavState, PlantState, Rotation, TimeGrid, ERR_DIM};
use crate::linalg::condition_number;

/// Largest accepted condition number of a discrete transition block.
pub const MAX_TRANSITION_COND: f64 = 1e12;

/// Physical and noise parameters of the quadrotor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    /// Body inertia (kg·m²).
    pub inertia: Matrix3<f64>,
    /// Gravity in the world frame (m/s²).
    pub gravity: Vector3<f64>,
    /// Acceleration process noise (m/s²·√s).
    pub sigma_eta_a: f64,
    /// Moment process noise (N·m·√s).
    pub sigma_eta_tau: f64,
    /// Accelerometer white noise.
    pub sigma_nu_a: f64,
    /// Gyroscope white noise.
    pub sigma_nu_w: f64,
    /// Accelerometer bias random walk; zero keeps biases constant.
    pub sigma_ba_walk: f64,
    /// Gyroscope bias random walk; zero keeps biases constant.
    pub sigma_bw_walk: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            inertia: Matrix3::from_diagonal(&Vector3::new(0.03, 0.03, 0.05)),
            gravity: Vector3::new(0.0, 0.0, -9.81),
            sigma_eta_a: 0.1,
            sigma_eta_tau: 0.0,
            sigma_nu_a: 0.02,
            sigma_nu_w: 0.005,
            sigma_ba_walk: 0.0,
            sigma_bw_walk: 0.0,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        let j = self.inertia;
        if (j - j.transpose()).amax() > 1e-12 || j.cholesky().is_none() {
            return Err(Error::InvalidInput("inertia must be symmetric positive definite".into()));
        }
        let scales = [
            self.sigma_eta_a,
            self.sigma_eta_tau,
            self.sigma_nu_a,
            self.sigma_nu_w,
            self.sigma_ba_walk,
            self.sigma_bw_walk,
        ];
        if scales.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput("noise scales must be finite and non-negative".into()));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::InvalidInput("gravity must be finite".into()));
        }
        Ok(())
    }

    pub fn bias_walk_enabled(&self) -> bool {
        self.sigma_ba_walk > 0.0 || self.sigma_bw_walk > 0.0
    }

    /// White-noise channel count: 12, or 18 with bias random walks.
    pub fn noise_channels(&self) -> usize {
        if self.bias_walk_enabled() {
            18
        } else {
            12
        }
    }

    pub fn inertia_inv(&self) -> Matrix3<f64> {
        self.inertia.try_inverse().expect("validated inertia")
    }
}

/// Nominal plant state derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantDerivative {
    pub p_dot: Vector3<f64>,
    pub v_dot: Vector3<f64>,
    pub r_dot: Matrix3<f64>,
    pub omega_dot: Vector3<f64>,
}

/// Noise-free plant dynamics.
pub fn plant_derivative(x: &PlantState, u: &ControlInput, params: &DynamicsParams) -> PlantDerivative {
    let r = x.r.matrix();
    let j = params.inertia;
    let w = x.omega;
    PlantDerivative {
        p_dot: x.v,
        v_dot: u.c * r * Vector3::z() + params.gravity,
        r_dot: r * crate::geom::skew(&w),
        omega_dot: params.inertia_inv() * (u.tau - w.cross(&(j * w))),
    }
}

/// RK4 integration of piecewise-constant per-interval controls. Returns the
/// state at every grid step (`K̄·K + 1` entries).
pub fn integrate_nominal(
    x0: &PlantState,
    controls: &[ControlInput],
    grid: &TimeGrid,
    params: &DynamicsParams,
) -> Result<Vec<PlantState>> {
    if controls.len() != grid.intervals {
        return Err(Error::InvalidInput(format!(
            "expected {} interval controls, got {}",
            grid.intervals,
            controls.len()
        )));
    }
    let sys = Quadrotor::plant_only(params.clone())?;
    let nav = NavState::new(*x0, Rotation::identity(), Vector3::zeros());
    let mut s = nav.to_embedding();
    let mut out = Vec::with_capacity(grid.total_steps() + 1);
    out.push(*x0);
    let mut step = 0;
    for u in controls {
        let ua = u.to_array();
        for _ in 0..grid.steps_per_interval {
            s = rk4_step(&sys, &s, &ua, grid.dt);
            step += 1;
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { step, what: "nominal integration".into() });
            }
            out.push(NavState::from_embedding(&s).plant);
        }
    }
    Ok(out)
}

/// Continuous error-state linearization.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedError {
    /// `21 × 21`
    pub a_c: DMatrix<f64>,
    /// `21 × n_w`
    pub g_c: DMatrix<f64>,
}

/// First-order discrete error dynamics `A_k = I + Δt·A_c`, `G_k = √Δt·G_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteLtv {
    pub a: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

/// Error Jacobians of the IMU-driven estimator about a nominal point with
/// zero bias estimates.
pub fn linearize_error(x: &PlantState, u: &ControlInput, params: &DynamicsParams) -> LinearizedError {
    let sys = Quadrotor::plant_only(params.clone()).expect("validated params");
    let nav = NavState::new(*x, Rotation::identity(), Vector3::zeros());
    let s = nav.to_embedding();
    let ua = u.to_array();
    let a = sys.error_jacobian(&s, &ua);
    let g = sys.noise_input(&s);
    let nw = params.noise_channels();
    LinearizedError {
        a_c: DMatrix::from_row_slice(ERR_DIM, ERR_DIM, &a),
        g_c: DMatrix::from_row_slice(ERR_DIM, nw, &g),
    }
}

pub fn discretize(lin: &LinearizedError, dt: f64) -> Result<DiscreteLtv> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let n = lin.a_c.nrows();
    let a = DMatrix::identity(n, n) + &lin.a_c * dt;
    let cond = condition_number(&a);
    if cond > MAX_TRANSITION_COND {
        return Err(Error::IllConditioned { what: "A_k".into(), cond, limit: MAX_TRANSITION_COND });
    }
    Ok(DiscreteLtv { a, g: &lin.g_c * dt.sqrt() })
}

/// State transition from step `from` to step `to`: `A_{to−1}···A_{from}`,
/// identity when `to == from`.
pub fn transition(blocks: &[DiscreteLtv], from: usize, to: usize) -> DMatrix<f64> {
    assert!(to >= from && to <= blocks.len(), "transition range {from}..{to}");
    let n = blocks.first().map(|b| b.a.nrows()).unwrap_or(0);
    let mut phi = DMatrix::identity(n, n);
    for b in &blocks[from..to] {
        phi = &b.a * phi;
    }
    phi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{boxminus, retract, ErrorVector, ERR_BA, ERR_BW, ERR_P, ERR_Q, ERR_V};
    use nalgebra::SVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plant(rng: &mut ChaCha8Rng) -> PlantState {
        let mut v = || Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        PlantState { p: v() * 2.0, v: v(), r: Rotation::exp(&v()), omega: v() }
    }

    fn random_control(rng: &mut ChaCha8Rng) -> ControlInput {
        ControlInput::new(
            rng.gen_range(6.0..14.0),
            Vector3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)),
        )
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = DynamicsParams::default();
        let x = PlantState::hover_at(Vector3::new(1.0, 2.0, 3.0));
        let d = plant_derivative(&x, &ControlInput::new(9.81, Vector3::zeros()), &p);
        assert!(d.v_dot.norm() < 1e-15);
        assert!(d.omega_dot.norm() < 1e-15);
        let d0 = plant_derivative(&x, &ControlInput::new(0.0, Vector3::zeros()), &p);
        assert_eq!(d0.v_dot, p.gravity);
    }

    #[test]
    fn plant_derivative_matches_flow_finite_difference() {
        let p = DynamicsParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let x = random_plant(&mut rng);
            let u = random_control(&mut rng);
            let d = plant_derivative(&x, &u, &p);
            // one-sided sixth-order difference of the integrated flow
            let h = 1e-3;
            let sample = |t: f64| -> PlantState {
                if t == 0.0 {
                    return x;
                }
                let g = TimeGrid::new(t, 1, 1).unwrap();
                *integrate_nominal(&x, &[u], &g, &p).unwrap().last().unwrap()
            };
            let w = [-49.0 / 20.0, 6.0, -15.0 / 2.0, 20.0 / 3.0, -15.0 / 4.0, 6.0 / 5.0, -1.0 / 6.0];
            let mut fd = Vector3::zeros();
            let mut fd_w = Vector3::zeros();
            for (k, wk) in w.iter().enumerate() {
                let s = sample(k as f64 * h);
                fd += s.v * *wk;
                fd_w += s.omega * *wk;
            }
            fd /= h;
            fd_w /= h;
            assert!((fd_w - d.omega_dot).norm() <= 1e-6 * (1.0 + d.omega_dot.norm()));
            assert!((fd - d.v_dot).norm() <= 1e-6 * (1.0 + d.v_dot.norm()), "{fd} vs {}", d.v_dot);
        }
    }

    #[test]
    fn integration_zero_span_and_hover() {
        let p = DynamicsParams::default();
        let x0 = PlantState::hover_at(Vector3::new(0.0, 0.0, 1.0));
        let hover = ControlInput::new(9.81, Vector3::zeros());
        let grid = TimeGrid::new(0.02, 7, 3).unwrap();
        let traj = integrate_nominal(&x0, &[hover; 3], &grid, &p).unwrap();
        assert_eq!(traj.len(), 22);
        assert_eq!(traj[0], x0);
        for s in &traj {
            assert!((s.p - x0.p).norm() < 1e-12);
        }
    }

    #[test]
    fn integration_fourth_order_convergence() {
        let p = DynamicsParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0 = random_plant(&mut rng);
        let u = random_control(&mut rng);
        let end = |dt: f64, k: usize| {
            let g = TimeGrid::new(dt, k, 1).unwrap();
            integrate_nominal(&x0, &[u], &g, &p).unwrap().last().copied().unwrap()
        };
        let reference = end(0.0025, 128);
        let e1 = (end(0.04, 8).p - reference.p).norm();
        let e2 = (end(0.02, 16).p - reference.p).norm();
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn error_jacobian_structure() {
        let p = DynamicsParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_plant(&mut rng);
        let lin = linearize_error(&x, &ControlInput::new(0.0, Vector3::zeros()), &p);
        let pv = lin.a_c.view((ERR_P.start, ERR_V.start), (3, 3));
        assert_eq!(pv.into_owned(), DMatrix::identity(3, 3));
        let vq = lin.a_c.view((ERR_V.start, ERR_Q.start), (3, 3));
        assert_eq!(vq.norm(), 0.0);
        let qbw = lin.a_c.view((ERR_Q.start, ERR_BW.start), (3, 3));
        assert_eq!(qbw.into_owned(), -DMatrix::identity(3, 3));
        let vba = lin.a_c.view((ERR_V.start, ERR_BA.start), (3, 3)).into_owned();
        assert!((vba + DMatrix::from_column_slice(3, 3, x.r.matrix().as_slice())).norm() < 1e-15);
        assert_eq!(lin.g_c.ncols(), 12);
    }

    #[test]
    fn error_jacobian_matches_flow_differences() {
        let p = DynamicsParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sys = Quadrotor::plant_only(p.clone()).unwrap();
        for _ in 0..5 {
            let x = random_plant(&mut rng);
            let u = random_control(&mut rng);
            let nav = NavState::new(x, Rotation::identity(), Vector3::zeros());
            let lin = linearize_error(&x, &u, &p);
            let dt = 1e-4;
            let step = |s: &NavState| -> NavState {
                let e = rk4_step(&sys, &s.to_embedding(), &u.to_array(), dt);
                NavState::from_embedding(&e)
            };
            let base = step(&nav);
            let eps = 1e-6;
            for dir in 0..ERR_DIM {
                let mut d = ErrorVector::zeros();
                d.0[dir] = eps;
                let plus = boxminus(&step(&retract(&nav, &d)), &base).0;
                let mut dm = ErrorVector::zeros();
                dm.0[dir] = -eps;
                let minus = boxminus(&step(&retract(&nav, &dm)), &base).0;
                let col: SVector<f64, 21> = (plus - minus) / (2.0 * eps);
                let expected = lin.a_c.column(dir) * dt;
                let mut unit = SVector::<f64, 21>::zeros();
                unit[dir] = 1.0;
                let diff = (col - unit - expected).norm();
                // first-order agreement; the residual is the O(dt²) remainder
                let bound = 2.0 * dt * dt * (1.0 + lin.a_c.norm()).powi(2);
                assert!(diff <= bound, "dir {dir}: {diff}");
            }
        }
    }

    #[test]
    fn discretize_examples() {
        let lin = LinearizedError { a_c: DMatrix::zeros(2, 2), g_c: DMatrix::identity(2, 2) };
        let d = discretize(&lin, 0.04).unwrap();
        assert_eq!(d.a, DMatrix::identity(2, 2));
        assert!((d.g.clone() - DMatrix::identity(2, 2) * 0.2).amax() < 1e-15);
        let lin = LinearizedError { a_c: DMatrix::from_element(1, 1, -0.5), g_c: DMatrix::zeros(1, 1) };
        assert_eq!(discretize(&lin, 1.0).unwrap().a[(0, 0)], 0.5);
        let lin = LinearizedError { a_c: DMatrix::from_element(1, 1, -1.0), g_c: DMatrix::zeros(1, 1) };
        assert!(discretize(&lin, 1.0).is_err());
    }

    #[test]
    fn transition_products() {
        let blk = DiscreteLtv { a: DMatrix::from_element(1, 1, 2.0), g: DMatrix::zeros(1, 1) };
        let blocks = vec![blk.clone(), blk.clone(), blk];
        assert_eq!(transition(&blocks, 1, 1)[(0, 0)], 1.0);
        assert_eq!(transition(&blocks, 0, 3)[(0, 0)], 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chain: Vec<DiscreteLtv> = (0..6)
            .map(|_| DiscreteLtv { a: DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0)), g: DMatrix::zeros(3, 1) })
            .collect();
        let lhs = transition(&chain, 1, 6);
        let rhs = transition(&chain, 3, 6) * transition(&chain, 1, 3);
        assert!((lhs - rhs).amax() < 1e-12);
    }
}
