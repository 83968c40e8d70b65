use std::ops::Range;

use nalgebra::Matrix3;

use super::{DynamicsParams, Dims, System};
use crate::autodiff::{FirstOrder, Real, Ring};
use crate::error::Result;
use crate::geom::{
    self, small, EMB_BA, EMB_BW, EMB_DIM, EMB_P, EMB_R, EMB_V, EMB_W, ERR_BA, ERR_BW, ERR_DIM, ERR_P,
    ERR_Q, ERR_V, PLANT_TAN_DIM,
};
use crate::sensing::{self, OrthoCamera};

/// Quadrotor with IMU-driven error state and an orthographic camera.
#[derive(Clone, Debug)]
pub struct Quadrotor {
    pub params: DynamicsParams,
    pub camera: OrthoCamera,
    j: Matrix3<f64>,
    j_inv: Matrix3<f64>,
}

impl Quadrotor {
    pub fn new(params: DynamicsParams, camera: OrthoCamera) -> Result<Self> {
        params.validate()?;
        let j = params.inertia;
        let j_inv = params.inertia_inv();
        Ok(Self { params, camera, j, j_inv })
    }

    /// Plant model with a default forward camera, for integration only.
    pub fn plant_only(params: DynamicsParams) -> Result<Self> {
        Self::new(params, OrthoCamera::forward(std::f64::consts::FRAC_PI_4, 1.0)?)
    }
}

fn mat_vec_f<T: Ring>(m: &Matrix3<f64>, v: &[T; 3]) -> [T; 3] {
    let mut out = [T::zero(); 3];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            if m[(i, j)] != 0.0 {
                *o += vj.scale(m[(i, j)]);
            }
        }
    }
    out
}

impl System for Quadrotor {
    fn dims(&self) -> Dims {
        Dims {
            err: ERR_DIM,
            noise: self.params.noise_channels(),
            emb: EMB_DIM,
            plant: PLANT_TAN_DIM,
            ctrl: 4,
            meas: 2,
            lm: 3,
        }
    }

    fn field<T: Ring>(&self, s: &[T], u: &[T]) -> Vec<T> {
        let v = small::read_v3(s, EMB_V);
        let r = small::read_m3(s, EMB_R);
        let w = small::read_v3(s, EMB_W);
        let ba = small::read_v3(s, EMB_BA);
        let bw = small::read_v3(s, EMB_BW);
        let g = &self.params.gravity;

        let mut out = vec![T::zero(); EMB_DIM];
        small::write_v3(&mut out, EMB_P, &v);
        let acc_b = [-ba[0], -ba[1], u[0] - ba[2]];
        let acc = small::mat_vec(&r, &acc_b);
        small::write_v3(&mut out, EMB_V, &[acc[0] + T::cst(g.x), acc[1] + T::cst(g.y), acc[2] + T::cst(g.z)]);
        let wr = small::sub(&w, &bw);
        let rdot = small::mat_mul(&r, &small::skew(&wr));
        small::write_m3(&mut out, EMB_R, &rdot);
        let jw = mat_vec_f(&self.j, &w);
        let gyro = small::cross(&w, &jw);
        let net = [u[1] - gyro[0], u[2] - gyro[1], u[3] - gyro[2]];
        small::write_v3(&mut out, EMB_W, &mat_vec_f(&self.j_inv, &net));
        out
    }

    fn normalize<T: Ring>(&self, s: &mut [T]) {
        let r = small::read_m3(s, EMB_R);
        small::write_m3(s, EMB_R, &geom::reorthonormalize(&r));
    }

    fn retract<T: Real>(&self, s: &[T], e: &[T]) -> Vec<T> {
        geom::retract_embedding(s, e)
    }

    fn perturb_plant<T: Real>(&self, s: &[T], d: &[T]) -> Vec<T> {
        geom::perturb_plant_embedding(s, d)
    }

    fn plant_tangent(&self, s: &[f64], ds: &[f64]) -> Vec<f64> {
        geom::plant_tangent_of_variation(s, ds).to_vec()
    }

    fn error_jacobian<T: Ring>(&self, s: &[T], u: &[T]) -> Vec<T> {
        let n = ERR_DIM;
        let r = small::read_m3(s, EMB_R);
        let w = small::read_v3(s, EMB_W);
        let ba = small::read_v3(s, EMB_BA);
        let bw = small::read_v3(s, EMB_BW);
        let mut a = vec![T::zero(); n * n];
        let mut set = |i: usize, j: usize, v: T| a[i * n + j] = v;
        for k in 0..3 {
            set(ERR_P.start + k, ERR_V.start + k, T::one());
            set(ERR_Q.start + k, ERR_BW.start + k, -T::one());
        }
        // velocity rows: −R [a_b]× on attitude, −R on accelerometer bias
        let acc_b = [-ba[0], -ba[1], u[0] - ba[2]];
        let vq = small::mat_mul(&r, &small::skew(&acc_b));
        let wr = small::sub(&w, &bw);
        let qq = small::skew(&wr);
        for i in 0..3 {
            for j in 0..3 {
                set(ERR_V.start + i, ERR_Q.start + j, -vq[i][j]);
                set(ERR_V.start + i, ERR_BA.start + j, -r[i][j]);
                set(ERR_Q.start + i, ERR_Q.start + j, -qq[i][j]);
            }
        }
        a
    }

    fn noise_input<T: Ring>(&self, _s: &[T]) -> Vec<T> {
        let p = &self.params;
        let nw = p.noise_channels();
        let mut g = vec![T::zero(); ERR_DIM * nw];
        let mut set = |i: usize, j: usize, v: f64| g[i * nw + j] = T::cst(v);
        let jt = self.j_inv * p.sigma_eta_tau;
        for k in 0..3 {
            set(ERR_V.start + k, k, p.sigma_eta_a);
            set(ERR_V.start + k, 3 + k, -p.sigma_nu_a);
            set(ERR_Q.start + k, 6 + k, -p.sigma_nu_w);
            for j in 0..3 {
                set(ERR_Q.start + k, 9 + j, jt[(k, j)]);
            }
            if nw == 18 {
                set(ERR_BA.start + k, 12 + k, p.sigma_ba_walk);
                set(ERR_BW.start + k, 15 + k, p.sigma_bw_walk);
            }
        }
        g
    }

    fn observe<T: Ring>(&self, s: &[T], l: &[T]) -> Vec<T> {
        let k = 1.0 / self.camera.noise_std;
        let h = sensing::observe_embedding(s, l);
        vec![h[0].scale(k), h[1].scale(k)]
    }

    fn affine_components<T: Ring>(&self, s: &[T]) -> Option<Vec<Vec<T>>> {
        let k = 1.0 / self.camera.noise_std;
        let h = sensing::affine_embedding(s);
        Some(h.iter().map(|c| vec![c[0].scale(k), c[1].scale(k)]).collect())
    }

    fn visibility_sq<T: FirstOrder>(&self, s: &[T], l: &[f64]) -> (T, bool) {
        sensing::visibility_sq_embedding(s, l, &self.camera)
    }

    fn visibility<T: FirstOrder>(&self, s: &[T], l: &[f64]) -> T {
        sensing::visibility_embedding(s, l, &self.camera)
    }

    fn hard_visible(&self, s: &[f64], l: &[f64]) -> bool {
        sensing::hard_visibility_embedding(s, l, &self.camera)
    }

    fn position_error(&self) -> Range<usize> {
        ERR_P
    }

    fn velocity_error(&self) -> Range<usize> {
        ERR_V
    }

    fn position_embedding(&self) -> Range<usize> {
        EMB_P..EMB_P + 3
    }

    fn hover_control(&self) -> Vec<f64> {
        vec![self.params.gravity.norm(), 0.0, 0.0, 0.0]
    }
}

impl Quadrotor {
    /// Thrust that balances gravity.
    pub fn hover_thrust(&self) -> f64 {
        self.params.gravity.norm()
    }

    /// Estimator state with this camera's mount as the extrinsics.
    pub fn nav_state(&self, plant: crate::geom::PlantState) -> crate::geom::NavState {
        crate::geom::NavState::new(plant, self.camera.r_cb, self.camera.t_cb)
    }

    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.j
    }
}
