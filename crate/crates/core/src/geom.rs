//! Manifold state, error-state coordinates and the difference/retraction
//! pair that every linearization in the crate is expressed in.
//!
//! Attitude errors are right-multiplicative: `R̂ = R · exp([q̃]×)`. The same
//! convention is used for the camera extrinsic rotation.
//!
//! Error-vector layout (21 coordinates, frozen):
//!
//! | slice      | meaning                          |
//! |------------|----------------------------------|
//! | `0..3`     | position error (world, m)        |
//! | `3..6`     | velocity error (world, m/s)      |
//! | `6..9`     | attitude error (body, rad)       |
//! | `9..12`    | accelerometer bias error         |
//! | `12..15`   | gyroscope bias error             |
//! | `15..18`   | camera extrinsic rotation error  |
//! | `18..21`   | camera extrinsic translation err |

use std::ops::Range;

use nalgebra::{Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Ring};
use crate::error::{Error, Result};

pub const ERR_DIM: usize = 21;
pub const ERR_P: Range<usize> = 0..3;
pub const ERR_V: Range<usize> = 3..6;
pub const ERR_Q: Range<usize> = 6..9;
pub const ERR_BA: Range<usize> = 9..12;
pub const ERR_BW: Range<usize> = 12..15;
pub const ERR_QCB: Range<usize> = 15..18;
pub const ERR_TCB: Range<usize> = 18..21;

/// Embedding of the full (plant + estimator) state as a flat vector.
pub const EMB_DIM: usize = 36;
pub const EMB_P: usize = 0;
pub const EMB_V: usize = 3;
pub const EMB_R: usize = 6;
pub const EMB_W: usize = 15;
pub const EMB_BA: usize = 18;
pub const EMB_BW: usize = 21;
pub const EMB_RCB: usize = 24;
pub const EMB_TCB: usize = 33;

/// Plant tangent layout: position, velocity, attitude (right), body rate.
pub const PLANT_TAN_DIM: usize = 12;

pub type V3<T> = [T; 3];
pub type M3<T> = [[T; 3]; 3];

/// Small fixed-size helpers usable with any [`Ring`] scalar.
pub mod small {
    use super::{M3, V3};
    use crate::autodiff::Ring;

    pub fn zero3<T: Ring>() -> V3<T> {
        [T::zero(); 3]
    }

    pub fn eye3<T: Ring>() -> M3<T> {
        let mut m = [[T::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = T::one();
        }
        m
    }

    pub fn add<T: Ring>(a: &V3<T>, b: &V3<T>) -> V3<T> {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }

    pub fn sub<T: Ring>(a: &V3<T>, b: &V3<T>) -> V3<T> {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    pub fn dot<T: Ring>(a: &V3<T>, b: &V3<T>) -> T {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    pub fn cross<T: Ring>(a: &V3<T>, b: &V3<T>) -> V3<T> {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    pub fn skew<T: Ring>(a: &V3<T>) -> M3<T> {
        let z = T::zero();
        [[z, -a[2], a[1]], [a[2], z, -a[0]], [-a[1], a[0], z]]
    }

    pub fn mat_vec<T: Ring>(m: &M3<T>, v: &V3<T>) -> V3<T> {
        [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
    }

    /// `mᵀ v`
    pub fn mat_t_vec<T: Ring>(m: &M3<T>, v: &V3<T>) -> V3<T> {
        let mut out = [T::zero(); 3];
        for (j, o) in out.iter_mut().enumerate() {
            *o = m[0][j] * v[0] + m[1][j] * v[1] + m[2][j] * v[2];
        }
        out
    }

    pub fn mat_mul<T: Ring>(a: &M3<T>, b: &M3<T>) -> M3<T> {
        let mut out = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        out
    }

    pub fn transpose<T: Ring>(a: &M3<T>) -> M3<T> {
        let mut out = *a;
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = a[j][i];
            }
        }
        out
    }

    pub fn mat_add<T: Ring>(a: &M3<T>, b: &M3<T>) -> M3<T> {
        let mut out = *a;
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] += b[i][j];
            }
        }
        out
    }

    pub fn mat_scale<T: Ring>(a: &M3<T>, k: f64) -> M3<T> {
        let mut out = *a;
        for row in out.iter_mut() {
            for x in row.iter_mut() {
                *x = x.scale(k);
            }
        }
        out
    }

    pub fn lift_v3<T: Ring>(v: &[f64]) -> V3<T> {
        [T::cst(v[0]), T::cst(v[1]), T::cst(v[2])]
    }

    pub fn read_v3<T: Copy>(s: &[T], at: usize) -> V3<T> {
        [s[at], s[at + 1], s[at + 2]]
    }

    pub fn write_v3<T: Copy>(s: &mut [T], at: usize, v: &V3<T>) {
        s[at..at + 3].copy_from_slice(v);
    }

    /// Row-major 3×3 block starting at `at`.
    pub fn read_m3<T: Copy>(s: &[T], at: usize) -> M3<T> {
        [
            [s[at], s[at + 1], s[at + 2]],
            [s[at + 3], s[at + 4], s[at + 5]],
            [s[at + 6], s[at + 7], s[at + 8]],
        ]
    }

    pub fn write_m3<T: Copy>(s: &mut [T], at: usize, m: &M3<T>) {
        for i in 0..3 {
            s[at + 3 * i..at + 3 * i + 3].copy_from_slice(&m[i]);
        }
    }
}

/// `exp([φ]×)` for any [`Real`] scalar, exact through second-order tangents
/// at `φ = 0`.
pub fn exp_so3_generic<T: Real>(phi: &V3<T>) -> M3<T> {
    let k = small::skew(phi);
    let k2 = small::mat_mul(&k, &k);
    let th2 = small::dot(phi, phi);
    let i3 = small::eye3::<T>();
    if th2.re() < 1e-12 {
        let k3 = small::mat_mul(&k2, &k);
        let m = small::mat_add(&i3, &k);
        let m = small::mat_add(&m, &small::mat_scale(&k2, 0.5));
        return small::mat_add(&m, &small::mat_scale(&k3, 1.0 / 6.0));
    }
    let th = th2.sqrt();
    let a = th.sin().div(th);
    let b = (T::one() - th.cos()).div(th2);
    let mut out = i3;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += a * k[i][j] + b * k2[i][j];
        }
    }
    out
}

/// One Newton step of the polar decomposition, `R (3I − RᵀR) / 2`.
/// Polynomial, so it also runs on series and dual scalars.
pub fn reorthonormalize<T: Ring>(r: &M3<T>) -> M3<T> {
    let rtr = small::mat_mul(&small::transpose(r), r);
    let mut c = small::mat_scale(&rtr, -1.0);
    for (i, row) in c.iter_mut().enumerate() {
        row[i] += T::cst(3.0);
    }
    small::mat_scale(&small::mat_mul(r, &c), 0.5)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let th2 = phi.norm_squared();
    let k = skew(phi);
    let k2 = k * k;
    if th2 < 1e-16 {
        return Matrix3::identity() + k + 0.5 * k2;
    }
    let th = th2.sqrt();
    Matrix3::identity() + (th.sin() / th) * k + ((1.0 - th.cos()) / th2) * k2
}

/// Principal-branch SO(3) logarithm. Uses a series near zero and axis
/// extraction from the symmetric part near π.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = 0.5 * vee(&(r - r.transpose()));
    let sin = w.norm();
    let theta = sin.atan2(cos);
    if theta < 1e-4 {
        return w * (1.0 + theta * theta / 6.0);
    }
    if cos < -0.99 {
        let b = 0.5 * (r + r.transpose()) - cos * Matrix3::identity();
        let mut i = 0;
        for j in 1..3 {
            if b[(j, j)] > b[(i, i)] {
                i = j;
            }
        }
        let mut axis = b.column(i).into_owned() / ((1.0 - cos) * b[(i, i)]).sqrt();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis.normalize() * theta;
    }
    w * (theta / sin)
}

/// World-from-body attitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Accepts `m` if it is orthonormal with unit determinant to 1e-9.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let orth = (m * m.transpose() - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if orth > 1e-9 || (det - 1.0).abs() > 1e-9 || !m.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "not a rotation: orthogonality residual {orth:.3e}, det {det:.6}"
            )));
        }
        Ok(Self(m))
    }

    pub fn exp(phi: &Vector3<f64>) -> Self {
        Self(exp_so3(phi))
    }

    pub fn from_yaw(yaw: f64) -> Self {
        Self::exp(&Vector3::new(0.0, 0.0, yaw))
    }

    pub fn log(&self) -> Vector3<f64> {
        log_so3(&self.0)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Right perturbation `R · exp([δ]×)`, re-orthonormalized.
    pub fn perturb(&self, delta: &Vector3<f64>) -> Self {
        let m = self.0 * exp_so3(delta);
        Self(orthonormalize(&m))
    }
}

/// Closest rotation (polar factor) from the eigendecomposition of `MᵀM`.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = (m.transpose() * m).symmetric_eigen();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let v = Matrix3::from_fn(|i, j| eig.eigenvectors[(i, order[j])]);
    let sigma = Vector3::from_fn(|i, _| eig.eigenvalues[order[i]].max(0.0).sqrt());
    let mut u = m * v;
    for j in 0..3 {
        if sigma[j] > 0.0 {
            u.column_mut(j).scale_mut(1.0 / sigma[j]);
        }
    }
    // complete the basis when the input is rank-deficient
    if sigma[2] <= 1e-12 * sigma[0].max(f64::MIN_POSITIVE) {
        let c = u.column(0).cross(&u.column(1));
        u.set_column(2, &c);
    }
    let flip = if (u * v.transpose()).determinant() < 0.0 { -1.0 } else { 1.0 };
    u.column_mut(2).scale_mut(flip);
    u * v.transpose()
}

/// Nominal vehicle state: position, velocity, attitude, body rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub r: Rotation,
    pub omega: Vector3<f64>,
}

impl PlantState {
    pub fn hover_at(p: Vector3<f64>) -> Self {
        Self { p, v: Vector3::zeros(), r: Rotation::identity(), omega: Vector3::zeros() }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).chain(self.omega.iter()).all(|x| x.is_finite())
            && self.r.matrix().iter().all(|x| x.is_finite())
    }

    /// Apply a plant-tangent perturbation `(δp, δv, δθ, δω)`.
    pub fn perturb(&self, d: &SVector<f64, PLANT_TAN_DIM>) -> Self {
        Self {
            p: self.p + d.fixed_rows::<3>(0),
            v: self.v + d.fixed_rows::<3>(3),
            r: self.r.perturb(&d.fixed_rows::<3>(6).into_owned()),
            omega: self.omega + d.fixed_rows::<3>(9),
        }
    }
}

/// Mass-normalized thrust (m/s²) and body moments (N·m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub c: f64,
    pub tau: Vector3<f64>,
}

impl ControlInput {
    pub const DIM: usize = 4;

    pub fn new(c: f64, tau: Vector3<f64>) -> Self {
        Self { c, tau }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.c, self.tau.x, self.tau.y, self.tau.z]
    }

    pub fn from_slice(u: &[f64]) -> Self {
        Self { c: u[0], tau: Vector3::new(u[1], u[2], u[3]) }
    }
}

/// Full estimator state: the plant state plus IMU biases and camera
/// extrinsics (body-to-camera rotation and translation).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub plant: PlantState,
    pub ba: Vector3<f64>,
    pub bw: Vector3<f64>,
    pub r_cb: Rotation,
    pub t_cb: Vector3<f64>,
}

impl NavState {
    pub fn new(plant: PlantState, r_cb: Rotation, t_cb: Vector3<f64>) -> Self {
        Self { plant, ba: Vector3::zeros(), bw: Vector3::zeros(), r_cb, t_cb }
    }

    pub fn to_embedding(&self) -> Vec<f64> {
        let mut s = vec![0.0; EMB_DIM];
        s[EMB_P..EMB_P + 3].copy_from_slice(self.plant.p.as_slice());
        s[EMB_V..EMB_V + 3].copy_from_slice(self.plant.v.as_slice());
        write_matrix(&mut s, EMB_R, self.plant.r.matrix());
        s[EMB_W..EMB_W + 3].copy_from_slice(self.plant.omega.as_slice());
        s[EMB_BA..EMB_BA + 3].copy_from_slice(self.ba.as_slice());
        s[EMB_BW..EMB_BW + 3].copy_from_slice(self.bw.as_slice());
        write_matrix(&mut s, EMB_RCB, self.r_cb.matrix());
        s[EMB_TCB..EMB_TCB + 3].copy_from_slice(self.t_cb.as_slice());
        s
    }

    /// Inverse of [`NavState::to_embedding`]; rotation blocks are projected
    /// back onto SO(3).
    pub fn from_embedding(s: &[f64]) -> Self {
        let v3 = |at: usize| Vector3::new(s[at], s[at + 1], s[at + 2]);
        let plant = PlantState {
            p: v3(EMB_P),
            v: v3(EMB_V),
            r: Rotation(orthonormalize(&read_matrix(s, EMB_R))),
            omega: v3(EMB_W),
        };
        Self {
            plant,
            ba: v3(EMB_BA),
            bw: v3(EMB_BW),
            r_cb: Rotation(orthonormalize(&read_matrix(s, EMB_RCB))),
            t_cb: v3(EMB_TCB),
        }
    }
}

pub fn write_matrix(s: &mut [f64], at: usize, m: &Matrix3<f64>) {
    for i in 0..3 {
        for j in 0..3 {
            s[at + 3 * i + j] = m[(i, j)];
        }
    }
}

pub fn read_matrix(s: &[f64], at: usize) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| s[at + 3 * i + j])
}

/// 21-dimensional estimator error in the layout documented at module level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorVector(pub SVector<f64, ERR_DIM>);

impl ErrorVector {
    pub fn zeros() -> Self {
        Self(SVector::zeros())
    }

    pub fn slice(&self, r: Range<usize>) -> Vector3<f64> {
        Vector3::new(self.0[r.start], self.0[r.start + 1], self.0[r.start + 2])
    }

    pub fn set(&mut self, r: Range<usize>, v: &Vector3<f64>) {
        self.0.rows_mut(r.start, 3).copy_from(v);
    }
}

/// Generalized difference `x̂ ⊟ x`.
pub fn boxminus(estimate: &NavState, truth: &NavState) -> ErrorVector {
    let mut e = ErrorVector::zeros();
    e.set(ERR_P, &(estimate.plant.p - truth.plant.p));
    e.set(ERR_V, &(estimate.plant.v - truth.plant.v));
    e.set(ERR_Q, &log_so3(&(truth.plant.r.matrix().transpose() * estimate.plant.r.matrix())));
    e.set(ERR_BA, &(estimate.ba - truth.ba));
    e.set(ERR_BW, &(estimate.bw - truth.bw));
    e.set(ERR_QCB, &log_so3(&(truth.r_cb.matrix().transpose() * estimate.r_cb.matrix())));
    e.set(ERR_TCB, &(estimate.t_cb - truth.t_cb));
    e
}

/// Retraction `x ⊞ δ`, the inverse of [`boxminus`] near `δ = 0`.
pub fn retract(x: &NavState, delta: &ErrorVector) -> NavState {
    let plant = PlantState {
        p: x.plant.p + delta.slice(ERR_P),
        v: x.plant.v + delta.slice(ERR_V),
        r: x.plant.r.perturb(&delta.slice(ERR_Q)),
        omega: x.plant.omega,
    };
    NavState {
        plant,
        ba: x.ba + delta.slice(ERR_BA),
        bw: x.bw + delta.slice(ERR_BW),
        r_cb: x.r_cb.perturb(&delta.slice(ERR_QCB)),
        t_cb: x.t_cb + delta.slice(ERR_TCB),
    }
}

/// Error-state retraction on the embedding, generic over the scalar.
pub fn retract_embedding<T: Real>(s: &[T], e: &[T]) -> Vec<T> {
    use small::*;
    let mut out = s.to_vec();
    for i in 0..3 {
        out[EMB_P + i] += e[ERR_P.start + i];
        out[EMB_V + i] += e[ERR_V.start + i];
        out[EMB_BA + i] += e[ERR_BA.start + i];
        out[EMB_BW + i] += e[ERR_BW.start + i];
        out[EMB_TCB + i] += e[ERR_TCB.start + i];
    }
    let r = read_m3(s, EMB_R);
    let dq = read_v3(e, ERR_Q.start);
    write_m3(&mut out, EMB_R, &mat_mul(&r, &exp_so3_generic(&dq)));
    let rcb = read_m3(s, EMB_RCB);
    let dqc = read_v3(e, ERR_QCB.start);
    write_m3(&mut out, EMB_RCB, &mat_mul(&rcb, &exp_so3_generic(&dqc)));
    out
}

/// Plant-tangent retraction on the embedding (`δ = (δp, δv, δθ, δω)`).
pub fn perturb_plant_embedding<T: Real>(s: &[T], d: &[T]) -> Vec<T> {
    use small::*;
    let mut out = s.to_vec();
    for i in 0..3 {
        out[EMB_P + i] += d[i];
        out[EMB_V + i] += d[3 + i];
        out[EMB_W + i] += d[9 + i];
    }
    let r = read_m3(s, EMB_R);
    let dq = read_v3(d, 6);
    write_m3(&mut out, EMB_R, &mat_mul(&r, &exp_so3_generic(&dq)));
    out
}

/// Linear map from an embedding variation `ds` at `s` to plant-tangent
/// coordinates (attitude part `vee(Rᵀ dR)`).
pub fn plant_tangent_of_variation(s: &[f64], ds: &[f64]) -> [f64; PLANT_TAN_DIM] {
    let r = read_matrix(s, EMB_R);
    let dr = read_matrix(ds, EMB_R);
    let m = r.transpose() * dr;
    let w = 0.5 * vee(&(m - m.transpose()));
    let mut out = [0.0; PLANT_TAN_DIM];
    for i in 0..3 {
        out[i] = ds[EMB_P + i];
        out[3 + i] = ds[EMB_V + i];
        out[6 + i] = w[i];
        out[9 + i] = ds[EMB_W + i];
    }
    out
}

/// Uniform measurement grid: `steps_per_interval` samples of width `dt` per
/// interval, `intervals` intervals in the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps_per_interval: usize,
    pub intervals: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps_per_interval: usize, intervals: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || steps_per_interval == 0 || intervals == 0 {
            return Err(Error::InvalidInput(format!(
                "time grid needs dt > 0, K >= 1, intervals >= 1 (got {dt}, {steps_per_interval}, {intervals})"
            )));
        }
        Ok(Self { dt, steps_per_interval, intervals })
    }

    pub fn interval_length(&self) -> f64 {
        self.dt * self.steps_per_interval as f64
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_interval * self.intervals
    }

    /// `t_k = k·dt` for every step of the horizon, including `t_0 = 0`.
    pub fn timestamps(&self) -> Vec<f64> {
        (0..=self.total_steps()).map(|k| k as f64 * self.dt).collect()
    }

    /// Interval-relative measurement times `t_1..t_K` (`t_0` excluded).
    pub fn interval_times(&self) -> Vec<f64> {
        (1..=self.steps_per_interval).map(|k| k as f64 * self.dt).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_state() -> NavState {
        let plant = PlantState {
            p: Vector3::new(1.0, -2.0, 0.5),
            v: Vector3::new(0.3, 0.1, -0.2),
            r: Rotation::exp(&Vector3::new(0.2, -0.4, 1.1)),
            omega: Vector3::new(0.1, 0.2, -0.3),
        };
        NavState {
            plant,
            ba: Vector3::new(0.01, 0.02, 0.03),
            bw: Vector3::new(-0.01, 0.0, 0.02),
            r_cb: Rotation::exp(&Vector3::new(-1.2, 0.3, 0.1)),
            t_cb: Vector3::new(0.05, 0.0, -0.02),
        }
    }

    #[test]
    fn boxminus_identity_is_zero() {
        let x = sample_state();
        assert_eq!(boxminus(&x, &x).0.norm(), 0.0);
    }

    #[test]
    fn boxminus_translation_only() {
        let x = sample_state();
        let mut y = x;
        y.plant.p += Vector3::new(1.0, 0.0, 0.0);
        let e = boxminus(&y, &x);
        assert!((e.0[0] - 1.0).abs() < 1e-15);
        assert!(e.0.rows(1, 20).norm() < 1e-15);
    }

    #[test]
    fn small_attitude_error_matches_angle() {
        let x = sample_state();
        let theta = Vector3::new(1e-3, -2e-3, 5e-4);
        let mut y = x;
        y.plant.r = Rotation(x.plant.r.matrix() * exp_so3(&theta));
        let e = boxminus(&y, &x);
        assert!((e.slice(ERR_Q) - theta).norm() < 1e-12);
    }

    #[test]
    fn log_near_pi_is_stable() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        for th in [std::f64::consts::PI - 1e-7, std::f64::consts::PI - 1e-3, 3.0] {
            let r = exp_so3(&(axis * th));
            let w = log_so3(&r);
            assert!((exp_so3(&w) - r).norm() < 1e-9, "theta {th}");
            assert!((w.norm() - th).abs() < 1e-6);
        }
    }

    #[test]
    fn log_near_zero_uses_series() {
        let phi = Vector3::new(1e-7, -3e-7, 2e-7);
        assert!((log_so3(&exp_so3(&phi)) - phi).norm() < 1e-20);
    }

    #[test]
    fn retract_zero_is_identity_and_translation_shifts() {
        let x = sample_state();
        assert_eq!(retract(&x, &ErrorVector::zeros()).plant.p, x.plant.p);
        let mut d = ErrorVector::zeros();
        d.0[1] = 0.25;
        let y = retract(&x, &d);
        assert!((y.plant.p - x.plant.p - Vector3::new(0.0, 0.25, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn generic_exp_matches_f64_exp() {
        let phi = [0.3, -0.2, 0.7];
        let g = exp_so3_generic::<f64>(&phi);
        let m = exp_so3(&Vector3::from(phi));
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[i][j] - m[(i, j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn time_grid_validation() {
        assert!(TimeGrid::new(0.0, 7, 11).is_err());
        assert!(TimeGrid::new(0.02, 0, 11).is_err());
        let g = TimeGrid::new(0.02, 7, 11).unwrap();
        let ts = g.timestamps();
        assert_eq!(ts.len(), 78);
        assert!(ts.windows(2).all(|w| (w[1] - w[0] - 0.02).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn retract_boxminus_round_trip(d in proptest::collection::vec(-0.5f64..0.5, ERR_DIM)) {
            let mut delta = ErrorVector(SVector::from_column_slice(&d));
            let n = delta.0.norm();
            if n > 0.5 {
                delta.0 *= 0.5 / n;
            }
            let x = sample_state();
            let y = retract(&x, &delta);
            let back = boxminus(&y, &x);
            prop_assert!((back.0 - delta.0).amax() < 1e-9);
            let r = y.plant.r.matrix();
            prop_assert!((r * r.transpose() - Matrix3::identity()).amax() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }
}
