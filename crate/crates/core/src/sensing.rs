//! Orthographic landmark camera: observation, smooth and hard field-of-view
//! visibility, affine decomposition and landmark mass coefficients.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::autodiff::{FirstOrder, Ring};
use crate::error::{Error, Result};
use crate::geom::{small, NavState, Rotation, EMB_P, EMB_R, EMB_RCB, EMB_TCB, V3};

/// Camera-frame landmark vectors shorter than this are degenerate.
pub const DEGENERATE_RANGE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthoCamera {
    /// Body-to-camera rotation.
    pub r_cb: Rotation,
    /// Body-to-camera translation (m).
    pub t_cb: Vector3<f64>,
    /// Half field-of-view (rad).
    pub theta_max: f64,
    /// Optical axis in the camera frame.
    pub axis: Vector3<f64>,
    /// Measurement standard deviation used to whiten observations.
    pub noise_std: f64,
}

impl OrthoCamera {
    /// Forward-looking mount: camera z along body x, camera x along body −y,
    /// camera y along body −z.
    pub fn forward(theta_max: f64, noise_std: f64) -> Result<Self> {
        let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        Self::new(Rotation::new(r)?, Vector3::zeros(), theta_max, Vector3::z(), noise_std)
    }

    pub fn new(
        r_cb: Rotation,
        t_cb: Vector3<f64>,
        theta_max: f64,
        axis: Vector3<f64>,
        noise_std: f64,
    ) -> Result<Self> {
        if !(theta_max > 0.0 && theta_max <= std::f64::consts::PI) {
            return Err(Error::InvalidInput(format!("theta_max {theta_max} outside (0, π]")));
        }
        if (axis.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("optical axis must be a unit vector".into()));
        }
        if !(noise_std > 0.0) {
            return Err(Error::InvalidInput("measurement noise std must be positive".into()));
        }
        Ok(Self { r_cb, t_cb, theta_max, axis, noise_std })
    }

    /// Visibility scaling `a = π / θ_max`.
    pub fn scaling(&self) -> f64 {
        std::f64::consts::PI / self.theta_max
    }
}

/// Landmark position in the world frame (m).
pub type Landmark = Vector3<f64>;

/// Camera-frame landmark vector `R_cb Rᵀ (l − p) + t_cb` on a state embedding.
pub fn camera_frame<T: Ring>(s: &[T], l: &[T]) -> V3<T> {
    let p = small::read_v3(s, EMB_P);
    let r = small::read_m3(s, EMB_R);
    let rcb = small::read_m3(s, EMB_RCB);
    let tcb = small::read_v3(s, EMB_TCB);
    let rel = small::sub(&[l[0], l[1], l[2]], &p);
    let body = small::mat_t_vec(&r, &rel);
    small::add(&small::mat_vec(&rcb, &body), &tcb)
}

/// Orthographic projection `[I₂ 0] l_c` on a state embedding.
pub fn observe_embedding<T: Ring>(s: &[T], l: &[T]) -> [T; 2] {
    let c = camera_frame(s, l);
    [c[0], c[1]]
}

/// Affine pieces `h_0 = P(−R_cb Rᵀ p + t_cb)`, `h_i = P R_cb Rᵀ e_i`.
pub fn affine_embedding<T: Ring>(s: &[T]) -> [[T; 2]; 4] {
    let p = small::read_v3(s, EMB_P);
    let r = small::read_m3(s, EMB_R);
    let rcb = small::read_m3(s, EMB_RCB);
    let tcb = small::read_v3(s, EMB_TCB);
    // M = R_cb Rᵀ, first two rows only
    let mut m = [[T::zero(); 3]; 2];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = rcb[i][0] * r[j][0] + rcb[i][1] * r[j][1] + rcb[i][2] * r[j][2];
        }
    }
    let h0 = [tcb[0] - small::dot(&m[0], &p), tcb[1] - small::dot(&m[1], &p)];
    [h0, [m[0][0], m[1][0]], [m[0][1], m[1][1]], [m[0][2], m[1][2]]]
}

/// Raw measurement for a full estimator state.
pub fn observe(x: &NavState, l: &Landmark) -> Vector2<f64> {
    let h = observe_embedding(&x.to_embedding(), l.as_slice());
    Vector2::new(h[0], h[1])
}

/// Affine components `[h_0, h_1, h_2, h_3]` for a full estimator state.
pub fn affine_components(x: &NavState) -> [Vector2<f64>; 4] {
    let h = affine_embedding(&x.to_embedding());
    h.map(|v| Vector2::new(v[0], v[1]))
}

/// Squared visibility and its derivative with respect to `y = cos θ`.
pub fn visibility_sq_of_cos(y: f64, theta_max: f64) -> (f64, f64) {
    let y = y.clamp(-1.0, 1.0);
    let theta = y.acos();
    if theta >= theta_max {
        return (0.0, 0.0);
    }
    let a = std::f64::consts::PI / theta_max;
    let f = 0.5 * ((a * theta).cos() + 1.0);
    let st = theta.sin();
    let df = if st > 1e-8 {
        0.5 * a * (a * theta).sin() / st
    } else if theta < 1.0 {
        0.5 * a * a
    } else {
        0.5 * a * a * (a * theta).cos() / theta.cos()
    };
    (f, df)
}

/// Square root of [`visibility_sq_of_cos`], `σ = cos(aθ/2)`, and its
/// derivative in `cos θ`.
pub fn visibility_of_cos(y: f64, theta_max: f64) -> (f64, f64) {
    let y = y.clamp(-1.0, 1.0);
    let theta = y.acos();
    if theta >= theta_max {
        return (0.0, 0.0);
    }
    let a = std::f64::consts::PI / theta_max;
    let f = (0.5 * a * theta).cos();
    let st = theta.sin();
    let df = if st > 1e-8 {
        0.5 * a * (0.5 * a * theta).sin() / st
    } else if theta < 1.0 {
        0.25 * a * a
    } else {
        0.25 * a * a * (0.5 * a * theta).cos() / theta.cos()
    };
    (f, df)
}

/// `cos θ` between the optical axis and the camera-frame landmark, or `None`
/// when the landmark sits at the camera centre.
pub fn cos_angle<T: FirstOrder>(s: &[T], l: &[f64], cam: &OrthoCamera) -> Option<T> {
    let lt = small::lift_v3::<T>(l);
    let c = camera_frame(s, &lt);
    let n2 = small::dot(&c, &c);
    if n2.re() <= DEGENERATE_RANGE * DEGENERATE_RANGE {
        return None;
    }
    let e = small::lift_v3::<T>(cam.axis.as_slice());
    Some(small::dot(&e, &c) * n2.sqrt().recip())
}

/// Smooth squared visibility on an embedding. Returns `(0, true)` for a
/// degenerate landmark at the camera centre.
pub fn visibility_sq_embedding<T: FirstOrder>(s: &[T], l: &[f64], cam: &OrthoCamera) -> (T, bool) {
    match cos_angle(s, l, cam) {
        None => (T::zero(), true),
        Some(y) => {
            let (f, df) = visibility_sq_of_cos(y.re(), cam.theta_max);
            (y.chain(f, df), false)
        }
    }
}

/// Smooth visibility `σ` on an embedding.
pub fn visibility_embedding<T: FirstOrder>(s: &[T], l: &[f64], cam: &OrthoCamera) -> T {
    match cos_angle(s, l, cam) {
        None => T::zero(),
        Some(y) => {
            let (f, df) = visibility_of_cos(y.re(), cam.theta_max);
            y.chain(f, df)
        }
    }
}

pub fn hard_visibility_embedding(s: &[f64], l: &[f64], cam: &OrthoCamera) -> bool {
    match cos_angle::<f64>(s, l, cam) {
        None => false,
        Some(y) => y.clamp(-1.0, 1.0).acos() < cam.theta_max,
    }
}

/// Smooth squared visibility with its degeneracy flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Visibility {
    pub sigma_sq: f64,
    pub degenerate: bool,
}

pub fn visibility_sq(x: &NavState, l: &Landmark, cam: &OrthoCamera) -> Visibility {
    let (v, degenerate) = visibility_sq_embedding::<f64>(&x.to_embedding(), l.as_slice(), cam);
    Visibility { sigma_sq: v, degenerate }
}

pub fn hard_visibility(x: &NavState, l: &Landmark, cam: &OrthoCamera) -> bool {
    hard_visibility_embedding(&x.to_embedding(), l.as_slice(), cam)
}

/// Visibility-weighted second moments of homogenized landmark coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct MassCoefficients(pub DMatrix<f64>);

impl MassCoefficients {
    pub fn zeros(n_l: usize) -> Self {
        Self(DMatrix::zeros(n_l + 1, n_l + 1))
    }

    /// `Σ w_n l̄_n l̄_nᵀ` with `l̄ = (1, l)`.
    pub fn from_weighted(points: &[(f64, &[f64])], n_l: usize) -> Self {
        let mut eta = DMatrix::zeros(n_l + 1, n_l + 1);
        for (w, l) in points {
            for i in 0..=n_l {
                let li = if i == 0 { 1.0 } else { l[i - 1] };
                for j in 0..=n_l {
                    let lj = if j == 0 { 1.0 } else { l[j - 1] };
                    eta[(i, j)] += w * (li * lj);
                }
            }
        }
        Self(eta)
    }
}

/// Generic mass coefficients (row-major `(n_l+1)²`) from weights and points.
pub fn mass_coefficients_generic<T: Ring>(weights: &[T], points: &[&[f64]], n_l: usize) -> Vec<T> {
    let k = n_l + 1;
    let mut eta = vec![T::zero(); k * k];
    for (w, l) in weights.iter().zip(points) {
        for i in 0..k {
            let li = if i == 0 { 1.0 } else { l[i - 1] };
            for j in i..k {
                let lj = if j == 0 { 1.0 } else { l[j - 1] };
                eta[i * k + j] += w.scale(li * lj);
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            eta[i * k + j] = eta[j * k + i];
        }
    }
    eta
}

/// Mass coefficients of a finite landmark set under smooth visibility.
pub fn mass_coefficients(x: &NavState, landmarks: &[Landmark], cam: &OrthoCamera) -> MassCoefficients {
    let s = x.to_embedding();
    let pts: Vec<(f64, &[f64])> = landmarks
        .iter()
        .map(|l| (visibility_sq_embedding::<f64>(&s, l.as_slice(), cam).0, l.as_slice()))
        .collect();
    MassCoefficients::from_weighted(&pts, 3)
}

pub type CoefficientFn = dyn Fn(&[f64]) -> MassCoefficients + Send + Sync;

/// Where landmark information comes from: an explicit set of points or a
/// state-dependent mass-coefficient model.
#[derive(Clone)]
pub enum LandmarkField {
    FiniteSet(Vec<Landmark>),
    /// Callable from a state embedding to mass coefficients. Treated as
    /// locally constant when differentiating objectives.
    CoefficientField(Arc<CoefficientFn>),
}

impl LandmarkField {
    pub fn len(&self) -> Option<usize> {
        match self {
            LandmarkField::FiniteSet(v) => Some(v.len()),
            LandmarkField::CoefficientField(_) => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }
}

impl fmt::Debug for LandmarkField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LandmarkField::FiniteSet(v) => write!(f, "FiniteSet({} landmarks)", v.len()),
            LandmarkField::CoefficientField(_) => write!(f, "CoefficientField(..)"),
        }
    }
}

/// Reads a whitespace-separated `x y z` table; blank lines and lines starting
/// with `#` are skipped.
pub fn load_landmarks(path: &Path) -> Result<Vec<Landmark>> {
    let text = std::fs::read_to_string(path)?;
    parse_landmarks(&text)
}

pub fn parse_landmarks(text: &str) -> Result<Vec<Landmark>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("landmark line {}: {e}", no + 1)))?;
        if vals.len() != 3 || !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "landmark line {}: expected three finite numbers",
                no + 1
            )));
        }
        out.push(Vector3::new(vals[0], vals[1], vals[2]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{PlantState, Rotation};
    use proptest::prelude::*;

    fn identity_state() -> NavState {
        NavState::new(PlantState::hover_at(Vector3::zeros()), Rotation::identity(), Vector3::zeros())
    }

    fn random_state(seed: u64) -> NavState {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v = || Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let plant = PlantState { p: v() * 3.0, v: v(), r: Rotation::exp(&v()), omega: v() };
        NavState { plant, ba: Vector3::zeros(), bw: Vector3::zeros(), r_cb: Rotation::exp(&v()), t_cb: v() * 0.1 }
    }

    #[test]
    fn identity_pose_observation() {
        let x = identity_state();
        assert_eq!(observe(&x, &Vector3::new(1.0, 2.0, 3.0)), Vector2::new(1.0, 2.0));
        let mut y = x;
        y.plant.p.x += 1.0;
        assert_eq!(observe(&y, &Vector3::new(1.0, 2.0, 3.0)), Vector2::new(0.0, 2.0));
    }

    #[test]
    fn identity_pose_components() {
        let h = affine_components(&identity_state());
        assert_eq!(h[0], Vector2::zeros());
        assert_eq!(h[1], Vector2::new(1.0, 0.0));
        assert_eq!(h[2], Vector2::new(0.0, 1.0));
        assert_eq!(h[3], Vector2::zeros());
    }

    #[test]
    fn affine_reconstruction_matches_direct() {
        for seed in 0..100 {
            let x = random_state(seed);
            let l = random_state(seed + 1000).plant.p;
            let h = affine_components(&x);
            let rec = h[0] + h[1] * l.x + h[2] * l.y + h[3] * l.z;
            assert!((rec - observe(&x, &l)).amax() <= 1e-12 * (1.0 + l.norm()));
        }
    }

    #[test]
    fn observation_jacobians_match_finite_differences() {
        use crate::autodiff::Dual;
        use crate::geom::retract_embedding;
        type D = Dual<f64, 24>;
        let x = random_state(7);
        let l = Vector3::new(2.0, -1.0, 0.5);
        let s: Vec<D> = x.to_embedding().iter().map(|v| D::constant(*v)).collect();
        let e: Vec<D> = (0..21).map(|i| D::variable(0.0, i)).collect();
        let lt: Vec<D> = (0..3).map(|i| D::variable(l[i], 21 + i)).collect();
        let h = observe_embedding(&retract_embedding(&s, &e), &lt);
        let f = |e: &[f64], l: &[f64]| {
            let s = retract_embedding(&x.to_embedding(), e);
            observe_embedding(&s, l)
        };
        let step = 1e-6;
        for dir in 0..24 {
            let mut ep = vec![0.0; 21];
            let mut em = vec![0.0; 21];
            let mut lp = l.as_slice().to_vec();
            let mut lm = lp.clone();
            if dir < 21 {
                ep[dir] = step;
                em[dir] = -step;
            } else {
                lp[dir - 21] += step;
                lm[dir - 21] -= step;
            }
            let (a, b) = (f(&ep, &lp), f(&em, &lm));
            for row in 0..2 {
                let fd = (a[row] - b[row]) / (2.0 * step);
                let an = h[row].g[dir];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "dir {dir} row {row}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn visibility_landmarks_of_the_curve() {
        let tm = 0.6;
        assert!((visibility_sq_of_cos(1.0, tm).0 - 1.0).abs() < 1e-15);
        assert!((visibility_sq_of_cos((tm / 2.0).cos(), tm).0 - 0.5).abs() < 1e-12);
        assert_eq!(visibility_sq_of_cos(tm.cos(), tm).0, 0.0);
        assert_eq!(visibility_sq_of_cos((tm + 0.01).cos(), tm).0, 0.0);
    }

    #[test]
    fn visibility_derivative_matches_fd_and_is_bounded() {
        let tm = 0.8;
        let a = std::f64::consts::PI / tm;
        let mut prev: Option<f64> = None;
        for i in 0..=400 {
            let theta = std::f64::consts::PI * i as f64 / 400.0;
            let y = theta.cos();
            let (_, df) = visibility_sq_of_cos(y, tm);
            assert!(df.is_finite() && df.abs() <= 0.5 * a * a + 1e-12);
            if let Some(p) = prev {
                assert!((df - p).abs() < 0.2, "jump at theta {theta}");
            }
            prev = Some(df);
            if theta > 1e-3 && (theta - tm).abs() > 1e-3 && theta < std::f64::consts::PI - 1e-3 {
                let h = 1e-7;
                let fd = (visibility_sq_of_cos(y + h, tm).0 - visibility_sq_of_cos(y - h, tm).0) / (2.0 * h);
                assert!((fd - df).abs() < 1e-5 * (1.0 + df.abs()), "theta {theta}: {fd} vs {df}");
            }
        }
    }

    #[test]
    fn degenerate_landmark_is_flagged() {
        let cam = OrthoCamera::forward(0.7, 0.01).unwrap();
        let x = NavState::new(PlantState::hover_at(Vector3::zeros()), cam.r_cb, cam.t_cb);
        let v = visibility_sq(&x, &Vector3::zeros(), &cam);
        assert!(v.degenerate);
        assert_eq!(v.sigma_sq, 0.0);
    }

    #[test]
    fn forward_camera_sees_ahead() {
        let cam = OrthoCamera::forward(0.7, 0.01).unwrap();
        assert!((cam.r_cb.matrix().determinant() - 1.0).abs() < 1e-15);
        let x = NavState::new(PlantState::hover_at(Vector3::zeros()), cam.r_cb, cam.t_cb);
        assert!(hard_visibility(&x, &Vector3::new(5.0, 0.0, 0.0), &cam));
        assert!(!hard_visibility(&x, &Vector3::new(-5.0, 0.0, 0.0), &cam));
        let v = visibility_sq(&x, &Vector3::new(5.0, 0.0, 0.0), &cam);
        assert!((v.sigma_sq - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mass_coefficients_single_landmark() {
        let cam = OrthoCamera::new(Rotation::identity(), Vector3::zeros(), 0.7, Vector3::x(), 1.0).unwrap();
        let x = NavState::new(PlantState::hover_at(Vector3::zeros()), cam.r_cb, cam.t_cb);
        let eta = mass_coefficients(&x, &[Vector3::new(2.0, 0.0, 0.0)], &cam).0;
        assert!((eta[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((eta[(0, 1)] - 2.0).abs() < 1e-12);
        assert!((eta[(1, 1)] - 4.0).abs() < 1e-12);
        for i in 0..4 {
            for j in 2..4 {
                assert_eq!(eta[(i, j)], 0.0);
                assert_eq!(eta[(j, i)], 0.0);
            }
        }
        let none = mass_coefficients(&x, &[Vector3::new(-2.0, 0.0, 0.0)], &cam).0;
        assert_eq!(none.norm(), 0.0);
    }

    #[test]
    fn landmark_table_parsing() {
        let pts = parse_landmarks("# header\n1 2 3\n\n4.5 -1 0\n").unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1], Vector3::new(4.5, -1.0, 0.0));
        assert!(parse_landmarks("1 2\n").is_err());
    }

    proptest! {
        #[test]
        fn mass_coefficients_psd_and_trace(seed in 0u64..500, n in 1usize..30) {
            use rand::{Rng, SeedableRng};
            let cam = OrthoCamera::forward(0.9, 0.01).unwrap();
            let x = random_state(seed);
            let x = NavState { r_cb: cam.r_cb, t_cb: cam.t_cb, ..x };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let lms: Vec<Landmark> = (0..n)
                .map(|_| Vector3::new(rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0), rng.gen_range(-3.0..3.0)))
                .collect();
            let eta = mass_coefficients(&x, &lms, &cam).0;
            let expected: f64 = lms.iter().map(|l| visibility_sq(&x, l, &cam).sigma_sq * (1.0 + l.norm_squared())).sum();
            prop_assert!((eta.trace() - expected).abs() <= 1e-10 * (1.0 + expected));
            prop_assert!((&eta - eta.transpose()).amax() == 0.0);
            let min = eta.clone().symmetric_eigenvalues().min();
            prop_assert!(min >= -1e-10 * (1.0 + eta.norm()));
            prop_assert!(eta[(0, 0)] >= 0.0 && eta[(0, 0)] <= n as f64);
        }
    }
}
