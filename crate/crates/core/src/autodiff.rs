//! Forward-mode differentiation primitives.
//!
//! Two building blocks cover every derivative the filter needs:
//!
//! * [`Dual<T, N>`]: a value plus `N` first-order tangents. Nesting
//!   (`Dual<Dual<f64, 16>, 24>`) gives mixed second derivatives, which is how
//!   Jacobians of Lie derivatives are differentiated with respect to the
//!   nominal state and control.
//! * [`Taylor<T>`]: a truncated power series in time, used to push a state
//!   through the vector field and read off time derivatives of the
//!   observation (Taylor-mode differentiation).
//!
//! Model code is written once against [`Ring`] (polynomial maps) or [`Real`]
//! (adds `sqrt`, `recip`, `sin`, `cos`) and instantiated with whichever scalar
//! the caller needs.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Commutative ring operations plus embedding of real constants.
pub trait Ring:
    Copy
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn cst(v: f64) -> Self;
    /// Multiply by a plain real.
    fn scale(self, k: f64) -> Self;
    /// Leading (primal) value.
    fn re(&self) -> f64;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
}

/// Ring with the elementary functions used by manifold maps.
pub trait Real: Ring {
    fn sqrt(self) -> Self;
    fn recip(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

/// Scalars that carry at most first-order information.
///
/// `chain` applies a scalar function whose value and derivative are already
/// known at the primal point; it is exact to first order only, so it is not
/// implemented for nested duals.
pub trait FirstOrder: Real {
    fn chain(self, f: f64, df: f64) -> Self;
}

/// Scalars whose tangents can be read back as plain numbers: `f64` (no
/// tangents) and [`Dual<f64, N>`].
pub trait Sens: FirstOrder {
    const DIRS: usize;
    fn tangent(&self, i: usize) -> f64;
    /// Constant with the given value and a unit tangent in direction `i`.
    fn seed(v: f64, i: usize) -> Self;
}

impl Ring for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self * k
    }
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
}

impl Real for f64 {
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn recip(self) -> Self {
        1.0 / self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

impl FirstOrder for f64 {
    #[inline]
    fn chain(self, f: f64, _df: f64) -> Self {
        f
    }
}

impl Sens for f64 {
    const DIRS: usize = 0;
    fn tangent(&self, _i: usize) -> f64 {
        0.0
    }
    fn seed(v: f64, _i: usize) -> Self {
        v
    }
}

/// Dual number with `N` tangent directions over base scalar `T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T, const N: usize> {
    pub v: T,
    pub g: [T; N],
}

impl<T: Ring, const N: usize> Dual<T, N> {
    pub fn constant(v: T) -> Self {
        Self { v, g: [T::zero(); N] }
    }

    /// `v` with a unit tangent in direction `i`.
    pub fn variable(v: T, i: usize) -> Self {
        let mut d = Self::constant(v);
        d.g[i] = T::one();
        d
    }
}

impl<T: Ring, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl<T: Ring, const N: usize> AddAssign for Dual<T, N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.v += rhs.v;
        for (a, b) in self.g.iter_mut().zip(rhs.g.iter()) {
            *a += *b;
        }
    }
}

impl<T: Ring, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self -= rhs;
        self
    }
}

impl<T: Ring, const N: usize> SubAssign for Dual<T, N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        self.v -= rhs.v;
        for (a, b) in self.g.iter_mut().zip(rhs.g.iter()) {
            *a -= *b;
        }
    }
}

impl<T: Ring, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut g = [T::zero(); N];
        for i in 0..N {
            g[i] = self.v * rhs.g[i] + self.g[i] * rhs.v;
        }
        Self { v: self.v * rhs.v, g }
    }
}

impl<T: Ring, const N: usize> MulAssign for Dual<T, N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<T: Ring, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.v = -self.v;
        for a in self.g.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl<T: Ring, const N: usize> Ring for Dual<T, N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(T::cst(v))
    }
    #[inline]
    fn scale(mut self, k: f64) -> Self {
        self.v = self.v.scale(k);
        for a in self.g.iter_mut() {
            *a = a.scale(k);
        }
        self
    }
    #[inline]
    fn re(&self) -> f64 {
        self.v.re()
    }
}

impl<T: Real, const N: usize> Dual<T, N> {
    #[inline]
    fn with_derivative(self, f: T, df: T) -> Self {
        Self { v: f, g: std::array::from_fn(|i| self.g[i] * df) }
    }
}

impl<T: Real, const N: usize> Real for Dual<T, N> {
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.with_derivative(s, s.recip().scale(0.5))
    }
    fn recip(self) -> Self {
        let r = self.v.recip();
        self.with_derivative(r, -(r * r))
    }
    fn sin(self) -> Self {
        self.with_derivative(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.with_derivative(self.v.cos(), -self.v.sin())
    }
}

impl<const N: usize> FirstOrder for Dual<f64, N> {
    fn chain(self, f: f64, df: f64) -> Self {
        self.with_derivative(f, df)
    }
}

impl<const N: usize> Sens for Dual<f64, N> {
    const DIRS: usize = N;
    #[inline]
    fn tangent(&self, i: usize) -> f64 {
        self.g[i]
    }
    fn seed(v: f64, i: usize) -> Self {
        Self::variable(v, i)
    }
}

/// Maximum number of retained series coefficients (time derivatives 0..=3).
pub const MAX_SERIES: usize = 4;

/// Truncated power series `Σ c[k] t^k`, keeping the first `n` coefficients.
#[derive(Clone, Copy, Debug)]
pub struct Taylor<T> {
    pub c: [T; MAX_SERIES],
    pub n: usize,
}

impl<T: Ring> Taylor<T> {
    pub fn constant(v: T, n: usize) -> Self {
        let mut c = [T::zero(); MAX_SERIES];
        c[0] = v;
        Self { c, n }
    }
}

impl<T: Ring> Add for Taylor<T> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl<T: Ring> AddAssign for Taylor<T> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.n = self.n.min(rhs.n);
        for k in 0..self.n {
            self.c[k] += rhs.c[k];
        }
    }
}

impl<T: Ring> Sub for Taylor<T> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self -= rhs;
        self
    }
}

impl<T: Ring> SubAssign for Taylor<T> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        self.n = self.n.min(rhs.n);
        for k in 0..self.n {
            self.c[k] -= rhs.c[k];
        }
    }
}

impl<T: Ring> Mul for Taylor<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let n = self.n.min(rhs.n);
        let mut c = [T::zero(); MAX_SERIES];
        for (k, ck) in c.iter_mut().enumerate().take(n) {
            let mut acc = self.c[0] * rhs.c[k];
            for i in 1..=k {
                acc += self.c[i] * rhs.c[k - i];
            }
            *ck = acc;
        }
        Self { c, n }
    }
}

impl<T: Ring> MulAssign for Taylor<T> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<T: Ring> Neg for Taylor<T> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        for k in 0..self.n {
            self.c[k] = -self.c[k];
        }
        self
    }
}

impl<T: Ring> Ring for Taylor<T> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(T::cst(v), MAX_SERIES)
    }
    #[inline]
    fn scale(mut self, k: f64) -> Self {
        for i in 0..self.n {
            self.c[i] = self.c[i].scale(k);
        }
        self
    }
    #[inline]
    fn re(&self) -> f64 {
        self.c[0].re()
    }
}

/// Directions used for local sensitivities: plant tangent plus control.
pub const SENS_DIRS: usize = 16;
/// Directions used for Jacobians: error state plus landmark coordinates.
pub const JET_DIRS: usize = 24;

pub type Sens16 = Dual<f64, SENS_DIRS>;
