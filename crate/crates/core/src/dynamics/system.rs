//! The interface every filtered system implements, plus a plain linear
//! system used for toy problems and oracle tests.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::autodiff::{FirstOrder, Real, Ring};

/// Dimensions of a filtered system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    /// Error-state dimension.
    pub err: usize,
    /// White-noise channels per step.
    pub noise: usize,
    /// Length of the flat state embedding.
    pub emb: usize,
    /// Plant tangent dimension (directions in which the nominal state moves).
    pub plant: usize,
    pub ctrl: usize,
    /// Measurement dimension per landmark.
    pub meas: usize,
    /// Landmark parameter dimension.
    pub lm: usize,
}

/// A nominal model with an error-state linearization and a landmark
/// observation map. Methods are generic over the scalar so the same code
/// yields values, first derivatives and time series.
pub trait System: Sync + Send {
    fn dims(&self) -> Dims;

    /// Time derivative of the state embedding under constant control.
    fn field<T: Ring>(&self, s: &[T], u: &[T]) -> Vec<T>;

    /// Projects an integrated embedding back onto the state manifold.
    fn normalize<T: Ring>(&self, _s: &mut [T]) {}

    /// Error-state retraction `s ⊞ e`.
    fn retract<T: Real>(&self, s: &[T], e: &[T]) -> Vec<T>;

    /// Plant-tangent retraction used to seed sensitivities.
    fn perturb_plant<T: Real>(&self, s: &[T], d: &[T]) -> Vec<T>;

    /// Plant-tangent coordinates of an embedding variation `ds` at `s`.
    fn plant_tangent(&self, s: &[f64], ds: &[f64]) -> Vec<f64>;

    /// Continuous error Jacobian `A_c`, row-major `err × err`.
    fn error_jacobian<T: Ring>(&self, s: &[T], u: &[T]) -> Vec<T>;

    /// Continuous noise input `G_c`, row-major `err × noise`.
    fn noise_input<T: Ring>(&self, s: &[T]) -> Vec<T>;

    /// Whitened landmark observation.
    fn observe<T: Ring>(&self, s: &[T], l: &[T]) -> Vec<T>;

    /// Components `h_0..h_{n_l}` with `observe(s, l) = h_0 + Σ l_i h_i`, when
    /// the observation is affine in the landmark.
    fn affine_components<T: Ring>(&self, _s: &[T]) -> Option<Vec<Vec<T>>> {
        None
    }

    /// Smooth squared visibility and a degeneracy flag.
    fn visibility_sq<T: FirstOrder>(&self, _s: &[T], _l: &[f64]) -> (T, bool) {
        (T::one(), false)
    }

    /// Smooth visibility `σ` (not squared), used by visibility objectives.
    fn visibility<T: FirstOrder>(&self, _s: &[T], _l: &[f64]) -> T {
        T::one()
    }

    fn hard_visible(&self, _s: &[f64], _l: &[f64]) -> bool {
        true
    }

    /// Error coordinates holding position.
    fn position_error(&self) -> Range<usize>;
    /// Error coordinates holding velocity.
    fn velocity_error(&self) -> Range<usize>;
    /// Embedding coordinates holding position.
    fn position_embedding(&self) -> Range<usize>;

    /// Control at which the plant is in equilibrium.
    fn hover_control(&self) -> Vec<f64>;
}

/// One classical RK4 step followed by [`System::normalize`].
pub fn rk4_step<T: Ring, Sy: System>(sys: &Sy, s: &[T], u: &[T], dt: f64) -> Vec<T> {
    let axpy = |a: &[T], k: &[T], h: f64| -> Vec<T> {
        a.iter().zip(k).map(|(x, y)| *x + y.scale(h)).collect()
    };
    let k1 = sys.field(s, u);
    let k2 = sys.field(&axpy(s, &k1, 0.5 * dt), u);
    let k3 = sys.field(&axpy(s, &k2, 0.5 * dt), u);
    let k4 = sys.field(&axpy(s, &k3, dt), u);
    let mut out: Vec<T> = (0..s.len())
        .map(|i| s[i] + (k1[i] + k2[i].scale(2.0) + k3[i].scale(2.0) + k4[i]).scale(dt / 6.0))
        .collect();
    sys.normalize(&mut out);
    out
}

/// Linear time-invariant system `ṡ = A s + B u`, `h = C s + D l` with
/// error coordinates equal to the state.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub hover: Vec<f64>,
    pub position: Range<usize>,
    pub velocity: Range<usize>,
}

impl LinearSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        g: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Self {
        let n = a.nrows();
        let hover = vec![0.0; b.ncols()];
        Self { a, b, g, c, d, hover, position: 0..n.min(3), velocity: 0..n.min(3) }
    }

    /// The scalar toy `ẋ = u`, `h = ℓ − x` with unit process noise.
    pub fn toy_1d() -> Self {
        Self::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
    }

    fn lin_map<T: Ring>(m: &DMatrix<f64>, x: &[T]) -> Vec<T> {
        (0..m.nrows())
            .map(|i| {
                let mut acc = T::zero();
                for j in 0..m.ncols() {
                    if m[(i, j)] != 0.0 {
                        acc += x[j].scale(m[(i, j)]);
                    }
                }
                acc
            })
            .collect()
    }

    fn row_major<T: Ring>(m: &DMatrix<f64>) -> Vec<T> {
        let mut out = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.push(T::cst(m[(i, j)]));
            }
        }
        out
    }
}

impl System for LinearSystem {
    fn dims(&self) -> Dims {
        let n = self.a.nrows();
        Dims {
            err: n,
            noise: self.g.ncols(),
            emb: n,
            plant: n,
            ctrl: self.b.ncols(),
            meas: self.c.nrows(),
            lm: self.d.ncols(),
        }
    }

    fn field<T: Ring>(&self, s: &[T], u: &[T]) -> Vec<T> {
        let ax = Self::lin_map(&self.a, s);
        let bu = Self::lin_map(&self.b, u);
        ax.into_iter().zip(bu).map(|(x, y)| x + y).collect()
    }

    fn retract<T: Real>(&self, s: &[T], e: &[T]) -> Vec<T> {
        s.iter().zip(e).map(|(a, b)| *a + *b).collect()
    }

    fn perturb_plant<T: Real>(&self, s: &[T], d: &[T]) -> Vec<T> {
        self.retract(s, d)
    }

    fn plant_tangent(&self, _s: &[f64], ds: &[f64]) -> Vec<f64> {
        ds.to_vec()
    }

    fn error_jacobian<T: Ring>(&self, _s: &[T], _u: &[T]) -> Vec<T> {
        Self::row_major(&self.a)
    }

    fn noise_input<T: Ring>(&self, _s: &[T]) -> Vec<T> {
        Self::row_major(&self.g)
    }

    fn observe<T: Ring>(&self, s: &[T], l: &[T]) -> Vec<T> {
        let cs = Self::lin_map(&self.c, s);
        let dl = Self::lin_map(&self.d, l);
        cs.into_iter().zip(dl).map(|(x, y)| x + y).collect()
    }

    fn affine_components<T: Ring>(&self, s: &[T]) -> Option<Vec<Vec<T>>> {
        let mut out = vec![Self::lin_map(&self.c, s)];
        for i in 0..self.d.ncols() {
            out.push((0..self.d.nrows()).map(|r| T::cst(self.d[(r, i)])).collect());
        }
        Some(out)
    }

    fn position_error(&self) -> Range<usize> {
        self.position.clone()
    }

    fn velocity_error(&self) -> Range<usize> {
        self.velocity.clone()
    }

    fn position_embedding(&self) -> Range<usize> {
        self.position.clone()
    }

    fn hover_control(&self) -> Vec<f64> {
        self.hover.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_integrates_constant_control() {
        let sys = LinearSystem::toy_1d();
        let mut s = vec![0.5];
        for _ in 0..10 {
            s = rk4_step(&sys, &s, &[2.0], 0.1);
        }
        assert!((s[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn toy_observation_and_components() {
        let sys = LinearSystem::toy_1d();
        assert_eq!(sys.observe(&[0.25], &[1.0]), vec![0.75]);
        let c = sys.affine_components(&[0.25f64]).unwrap();
        assert_eq!(c, vec![vec![-0.25], vec![1.0]]);
    }
}
