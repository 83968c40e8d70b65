//! Dense linear algebra helpers: matrices carrying forward tangents, the
//! left-nullspace projector and its differential, symmetric square roots and
//! guarded symmetric inverses.

use nalgebra::{DMatrix, DVector};

use crate::autodiff::Sens;
use crate::error::{Error, Result};

/// Relative rank tolerance shared by nullspace and pseudo-inverse.
pub const RANK_TOL: f64 = 1e-10;

/// Relative singular-value floor when singular values come from a Gram
/// matrix, whose eigenvalues carry `ε·λ_max` noise.
pub const GRAM_RANK_TOL: f64 = 1e-7;

/// A matrix together with `nd` directional derivatives. An empty `d` means
/// every tangent is zero.
#[derive(Clone, Debug)]
pub struct Tm {
    pub v: DMatrix<f64>,
    pub d: Vec<DMatrix<f64>>,
    pub nd: usize,
}

impl Tm {
    pub fn constant(v: DMatrix<f64>, nd: usize) -> Self {
        Self { v, d: Vec::new(), nd }
    }

    pub fn zeros(r: usize, c: usize, nd: usize) -> Self {
        Self::constant(DMatrix::zeros(r, c), nd)
    }

    pub fn identity(n: usize, nd: usize) -> Self {
        Self::constant(DMatrix::identity(n, n), nd)
    }

    /// Builds from a closure over sensitivity scalars.
    pub fn from_fn<S: Sens>(r: usize, c: usize, f: impl Fn(usize, usize) -> S) -> Self {
        let vals: Vec<S> = (0..r * c).map(|k| f(k / c, k % c)).collect();
        Self::from_row_major(r, c, &vals)
    }

    pub fn from_row_major<S: Sens>(r: usize, c: usize, vals: &[S]) -> Self {
        let nd = S::DIRS;
        let v = DMatrix::from_fn(r, c, |i, j| vals[i * c + j].re());
        let d = (0..nd)
            .map(|t| DMatrix::from_fn(r, c, |i, j| vals[i * c + j].tangent(t)))
            .collect();
        Self { v, d, nd }
    }

    pub fn is_const(&self) -> bool {
        self.d.is_empty()
    }

    pub fn nrows(&self) -> usize {
        self.v.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.ncols()
    }

    pub fn tangent(&self, t: usize) -> DMatrix<f64> {
        if self.d.is_empty() {
            DMatrix::zeros(self.v.nrows(), self.v.ncols())
        } else {
            self.d[t].clone()
        }
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Self { v: f(&self.v), d: self.d.iter().map(&f).collect(), nd: self.nd }
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|m| m * k)
    }

    pub fn rows(&self, start: usize, n: usize) -> Self {
        self.map(|m| m.rows(start, n).into_owned())
    }

    pub fn columns(&self, start: usize, n: usize) -> Self {
        self.map(|m| m.columns(start, n).into_owned())
    }

    pub fn mul(&self, b: &Tm) -> Tm {
        let v = &self.v * &b.v;
        let nd = self.nd.max(b.nd);
        let d = match (self.is_const(), b.is_const()) {
            (true, true) => Vec::new(),
            (false, true) => self.d.iter().map(|da| da * &b.v).collect(),
            (true, false) => b.d.iter().map(|db| &self.v * db).collect(),
            (false, false) => self
                .d
                .iter()
                .zip(b.d.iter())
                .map(|(da, db)| {
                    let mut m = da * &b.v;
                    m.gemm(1.0, &self.v, db, 1.0);
                    m
                })
                .collect(),
        };
        Tm { v, d, nd }
    }

    /// `selfᵀ · b`
    pub fn tr_mul(&self, b: &Tm) -> Tm {
        let v = self.v.tr_mul(&b.v);
        let nd = self.nd.max(b.nd);
        let d = match (self.is_const(), b.is_const()) {
            (true, true) => Vec::new(),
            (false, true) => self.d.iter().map(|da| da.tr_mul(&b.v)).collect(),
            (true, false) => b.d.iter().map(|db| self.v.tr_mul(db)).collect(),
            (false, false) => self
                .d
                .iter()
                .zip(b.d.iter())
                .map(|(da, db)| {
                    let mut m = da.tr_mul(&b.v);
                    m.gemm_tr(1.0, &self.v, db, 1.0);
                    m
                })
                .collect(),
        };
        Tm { v, d, nd }
    }

    pub fn add(&self, b: &Tm) -> Tm {
        self.lin(1.0, b, 1.0)
    }

    pub fn sub(&self, b: &Tm) -> Tm {
        self.lin(1.0, b, -1.0)
    }

    /// `α·self + β·b`
    pub fn lin(&self, alpha: f64, b: &Tm, beta: f64) -> Tm {
        let v = &self.v * alpha + &b.v * beta;
        let nd = self.nd.max(b.nd);
        let d = match (self.is_const(), b.is_const()) {
            (true, true) => Vec::new(),
            (false, true) => self.d.iter().map(|m| m * alpha).collect(),
            (true, false) => b.d.iter().map(|m| m * beta).collect(),
            (false, false) => {
                self.d.iter().zip(b.d.iter()).map(|(x, y)| x * alpha + y * beta).collect()
            }
        };
        Tm { v, d, nd }
    }

    /// Horizontal concatenation.
    pub fn hcat(parts: &[Tm]) -> Tm {
        let r = parts[0].nrows();
        let c: usize = parts.iter().map(|p| p.ncols()).sum();
        let nd = parts.iter().map(|p| p.nd).max().unwrap_or(0);
        let any = parts.iter().any(|p| !p.is_const());
        let mut v = DMatrix::zeros(r, c);
        let mut d = if any { vec![DMatrix::zeros(r, c); nd] } else { Vec::new() };
        let mut at = 0;
        for p in parts {
            v.columns_mut(at, p.ncols()).copy_from(&p.v);
            if any && !p.is_const() {
                for (dt, pt) in d.iter_mut().zip(p.d.iter()) {
                    dt.columns_mut(at, p.ncols()).copy_from(pt);
                }
            }
            at += p.ncols();
        }
        Tm { v, d, nd }
    }

    /// Vertical concatenation.
    pub fn vcat(parts: &[Tm]) -> Tm {
        let t: Vec<Tm> = parts.iter().map(|p| p.transpose()).collect();
        Tm::hcat(&t).transpose()
    }
}

/// Scalar with tangents, the scalar analogue of [`Tm`].
#[derive(Clone, Debug, PartialEq)]
pub struct Ts {
    pub v: f64,
    pub d: Vec<f64>,
}

impl Ts {
    pub fn constant(v: f64, nd: usize) -> Self {
        Self { v, d: vec![0.0; nd] }
    }

    pub fn from_sens<S: Sens>(s: S) -> Self {
        Self { v: s.re(), d: (0..S::DIRS).map(|i| s.tangent(i)).collect() }
    }

    pub fn tangent(&self, t: usize) -> f64 {
        self.d.get(t).copied().unwrap_or(0.0)
    }
}

/// Orthonormal basis of the left nullspace of `l` together with the SVD
/// factors needed to differentiate it.
#[derive(Clone, Debug)]
pub struct Nullspace {
    /// `m × (m − rank)`, `QᵀL = 0`, `QᵀQ = I`.
    pub q: DMatrix<f64>,
    /// Leading left singular vectors (`m × rank`).
    pub u1: DMatrix<f64>,
    pub sigma1: DVector<f64>,
    /// Leading right singular vectors (`n × rank`).
    pub v1: DMatrix<f64>,
    pub rank: usize,
}

impl Nullspace {
    /// True when `l` had full column rank, the condition under which the
    /// differential below satisfies both constraint identities.
    pub fn is_smooth(&self) -> bool {
        self.rank == self.v1.nrows()
    }
}

/// Left-nullspace basis of `l` from the eigendecomposition of `lᵀl`, with
/// the range basis `U₁ = l V₁ Σ₁⁻¹` paired to `V₁` by construction. Singular
/// values below `GRAM_RANK_TOL·σ_max` are treated as zero; an all-zero `l`
/// yields `Q = I`.
pub fn nullspace_projector(l: &DMatrix<f64>) -> Nullspace {
    let (m, n) = l.shape();
    if n == 0 || l.iter().all(|x| *x == 0.0) {
        return Nullspace {
            q: DMatrix::identity(m, m),
            u1: DMatrix::zeros(m, 0),
            sigma1: DVector::zeros(0),
            v1: DMatrix::zeros(n, 0),
            rank: 0,
        };
    }
    let eig = symmetrize(&l.tr_mul(l)).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let smax = eig.eigenvalues[order[0]].max(0.0).sqrt();
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i].max(0.0).sqrt() > GRAM_RANK_TOL * smax)
        .count()
        .min(m);
    let v1 = DMatrix::from_fn(n, rank, |i, j| eig.eigenvectors[(i, order[j])]);
    let sigma1 = DVector::from_fn(rank, |i, _| eig.eigenvalues[order[i]].sqrt());
    let mut u1 = l * &v1;
    for j in 0..rank {
        u1.column_mut(j).scale_mut(1.0 / sigma1[j]);
    }
    let q = orthonormal_complement(&u1);
    Nullspace { q, u1, sigma1, v1, rank }
}

/// Orthonormal basis of the complement of the (orthonormal) columns of `u`,
/// by twice-orthogonalized Gram–Schmidt over the coordinate axes.
fn orthonormal_complement(u: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, r) = u.shape();
    let mut basis: Vec<DVector<f64>> = u.column_iter().map(|c| c.into_owned()).collect();
    let mut out = Vec::with_capacity(m - r);
    let mut candidates: Vec<usize> = (0..m).collect();
    // axes least represented in span(u) first
    let weight = |i: usize| u.row(i).norm_squared();
    candidates.sort_by(|&a, &b| weight(a).total_cmp(&weight(b)));
    for i in candidates {
        if out.len() == m - r {
            break;
        }
        let mut v = DVector::zeros(m);
        v[i] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 0.5 {
            v /= norm;
            basis.push(v.clone());
            out.push(v);
        }
    }
    if out.len() < m - r {
        // fall back to a looser threshold; reachable only for badly scaled `u`
        for i in 0..m {
            if out.len() == m - r {
                break;
            }
            let mut v = DVector::zeros(m);
            v[i] = 1.0;
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&v);
                    v.axpy(-c, b, 1.0);
                }
            }
            let norm = v.norm();
            if norm > 1e-6 {
                v /= norm;
                basis.push(v.clone());
                out.push(v);
            }
        }
    }
    if out.is_empty() {
        return DMatrix::zeros(m, 0);
    }
    DMatrix::from_columns(&out)
}

/// Differential of the nullspace basis, `dQ = U₁Z₁` with
/// `Z₁ = −Σ₁⁻¹V₁ᵀdLᵀQ` and the skew-symmetric gauge block set to zero.
pub fn nullspace_differential(ns: &Nullspace, dl: &DMatrix<f64>) -> DMatrix<f64> {
    if ns.rank == 0 {
        return DMatrix::zeros(ns.q.nrows(), ns.q.ncols());
    }
    let mut z1 = ns.v1.tr_mul(&dl.tr_mul(&ns.q));
    for i in 0..ns.rank {
        let s = -1.0 / ns.sigma1[i];
        z1.row_mut(i).scale_mut(s);
    }
    &ns.u1 * z1
}

/// Nullspace basis as a tangent-carrying matrix.
pub fn nullspace_tm(l: &Tm) -> (Nullspace, Tm) {
    let ns = nullspace_projector(&l.v);
    let d = if l.is_const() {
        Vec::new()
    } else {
        l.d.iter().map(|dl| nullspace_differential(&ns, dl)).collect()
    };
    let q = Tm { v: ns.q.clone(), d, nd: l.nd };
    (ns, q)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric square root through an eigendecomposition, clamping negative
/// eigenvalues at zero.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let d = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Inverse of a symmetric matrix: Cholesky when positive definite, otherwise
/// an eigen pseudo-inverse dropping eigenvalues below `RANK_TOL·|λ|max`.
pub fn sym_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = symmetrize(m).cholesky() {
        return ch.inverse();
    }
    sym_pinv(m)
}

pub fn sym_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let d = eig.eigenvalues.map(|x| if x.abs() > RANK_TOL * lmax { 1.0 / x } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = m.singular_values();
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn rel_frobenius(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let n = reference.norm();
    if n == 0.0 {
        a.norm()
    } else {
        (a - reference).norm() / n
    }
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(r, c);
    let (mut i, mut j) = (0, 0);
    for b in blocks {
        out.view_mut((i, j), b.shape()).copy_from(*b);
        i += b.nrows();
        j += b.ncols();
    }
    out
}

pub fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step: 0, what: what.to_string() })
    }
}
