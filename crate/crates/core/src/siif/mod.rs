//! The bundled interval update on plain matrices: batch blocks, nullspace
//! marginalization, coupling and injection matrices, propagation of the joint
//! information and Schur marginalization. The model-level drivers with
//! gradients live in [`engine`].

use nalgebra::DMatrix;

use crate::dynamics::{DiscreteLtv, MAX_TRANSITION_COND};
use crate::error::{Error, Result};
use crate::linalg::{condition_number, nullspace_projector, sym_pinv, sym_sqrt, symmetrize};

pub mod engine;

pub use engine::*;

/// Coupling matrices above this condition number trigger a warning.
pub const COUPLING_COND_WARN: f64 = 1e8;

/// Information over the augmented vector `(e₀, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointInformation {
    pub lambda: DMatrix<f64>,
    /// Dimension of the error-state block.
    pub n_err: usize,
}

impl JointInformation {
    /// `blkdiag(S₀, I)`: the state prior and unit-information noise.
    pub fn prior(s0: &DMatrix<f64>, n_noise: usize) -> Self {
        let n = s0.nrows();
        let mut lambda = DMatrix::identity(n + n_noise, n + n_noise);
        lambda.view_mut((0, 0), (n, n)).copy_from(s0);
        Self { lambda, n_err: n }
    }

    /// Adds `weight · Λ^Z`.
    pub fn add_scaled(&mut self, contribution: &DMatrix<f64>, weight: f64) {
        self.lambda += contribution * weight;
    }

    pub fn n_noise(&self) -> usize {
        self.lambda.nrows() - self.n_err
    }
}

/// Information over the error state at a time instant.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoState {
    pub s: DMatrix<f64>,
    pub t: f64,
}

impl InfoState {
    /// Covariance `S⁻¹`, or an error when `S` is singular.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let chol = symmetrize(&self.s)
            .cholesky()
            .ok_or(Error::SingularInformation { interval: usize::MAX })?;
        Ok(chol.inverse())
    }
}

/// Stacked error dynamics and measurement Jacobians of one interval.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchBlocks {
    /// Row block `k−1` holds `Φ_0^k`.
    pub a_block: DMatrix<f64>,
    /// Row block `k−1`, column block `j` holds `Φ_{j+1}^k G_j` for `j < k`.
    pub g_block: DMatrix<f64>,
    /// Block diagonal with `H_k`, one block per measurement time.
    pub h_block: DMatrix<f64>,
    /// Stacked landmark Jacobians `L_k`.
    pub l_block: DMatrix<f64>,
}

/// Assembles the batch blocks from the per-step error dynamics and the
/// measurement Jacobians at steps `1..=K` (`h[k−1]`, `l[k−1]`).
pub fn build_batch_blocks(
    ltv: &[DiscreteLtv],
    h: &[DMatrix<f64>],
    l: &[DMatrix<f64>],
) -> Result<BatchBlocks> {
    let k = ltv.len();
    if k == 0 || h.len() != k || l.len() != k {
        return Err(Error::InvalidInput(format!(
            "batch needs K ≥ 1 steps with one Jacobian pair each (K = {k}, H: {}, L: {})",
            h.len(),
            l.len()
        )));
    }
    let n = ltv[0].a.nrows();
    let nw = ltv[0].g.ncols();
    let m = h[0].nrows();
    let nl = l[0].ncols();
    let mut a_block = DMatrix::zeros(n * k, n);
    let mut g_block = DMatrix::zeros(n * k, nw * k);
    let mut h_block = DMatrix::zeros(m * k, n * k);
    let mut l_block = DMatrix::zeros(m * k, nl);
    let mut phi = DMatrix::identity(n, n);
    for step in 1..=k {
        let row = (step - 1) * n;
        phi = &ltv[step - 1].a * phi;
        a_block.view_mut((row, 0), (n, n)).copy_from(&phi);
        // Φ_{j+1}^k G_j, built from the newest noise column backwards
        let mut tail = DMatrix::identity(n, n);
        for j in (0..step).rev() {
            g_block.view_mut((row, j * nw), (n, nw)).copy_from(&(&tail * &ltv[j].g));
            tail = tail * &ltv[j].a;
        }
        h_block.view_mut(((step - 1) * m, row), (m, n)).copy_from(&h[step - 1]);
        l_block.view_mut(((step - 1) * m, 0), (m, nl)).copy_from(&l[step - 1]);
    }
    Ok(BatchBlocks { a_block, g_block, h_block, l_block })
}

/// Landmark treatment inside the bundled residual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandmarkMode {
    /// Project the residual onto the left nullspace of the landmark Jacobian.
    #[default]
    Marginalize,
    /// Treat the landmark as known.
    Condition,
}

/// Information contribution `H̄ᵀH̄` over `(e₀, W)` of one landmark's batch,
/// `H̄ = Qᵀ·Hblock·[Ablock Gblock]`.
pub fn explicit_info_contribution(blocks: &BatchBlocks, mode: LandmarkMode) -> DMatrix<f64> {
    let hbar = explicit_factor(blocks, mode);
    hbar.tr_mul(&hbar)
}

/// The factor `H̄` of [`explicit_info_contribution`].
pub fn explicit_factor(blocks: &BatchBlocks, mode: LandmarkMode) -> DMatrix<f64> {
    let mut ag = DMatrix::zeros(blocks.a_block.nrows(), blocks.a_block.ncols() + blocks.g_block.ncols());
    ag.columns_mut(0, blocks.a_block.ncols()).copy_from(&blocks.a_block);
    ag.columns_mut(blocks.a_block.ncols(), blocks.g_block.ncols()).copy_from(&blocks.g_block);
    let stacked = &blocks.h_block * ag;
    match mode {
        LandmarkMode::Condition => stacked,
        LandmarkMode::Marginalize => nullspace_projector(&blocks.l_block).q.tr_mul(&stacked),
    }
}

/// Gram matrix of timestamp monomials and its symmetric square root.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingMatrix {
    pub w: DMatrix<f64>,
    pub sqrt: DMatrix<f64>,
    pub cond: f64,
}

/// `W_ij = λ_{i+j} / (i!·j!)` with `λ_s = Σ_k t_k^s` over the measurement
/// times of one interval, relative to its start.
pub fn coupling_matrix(times: &[f64], r: usize) -> Result<CouplingMatrix> {
    if r == 0 {
        return Err(Error::InvalidInput("coupling matrix needs r ≥ 1".into()));
    }
    let lambda: Vec<f64> = (0..2 * r - 1).map(|s| times.iter().map(|t| t.powi(s as i32)).sum()).collect();
    let fact = |n: usize| -> f64 { (1..=n).map(|k| k as f64).product() };
    let w = DMatrix::from_fn(r, r, |i, j| lambda[i + j] / (fact(i) * fact(j)));
    let sqrt = sym_sqrt(&w);
    let cond = condition_number(&w);
    if cond > COUPLING_COND_WARN {
        log::warn!("coupling matrix condition number {cond:.3e} exceeds {COUPLING_COND_WARN:.0e}");
    }
    Ok(CouplingMatrix { w, sqrt, cond })
}

/// Interval noise injected at the interval start:
/// `E = [I, √t_K·(Φ_0^K)⁻¹·G_c]`.
pub fn injection_matrix(phi: &DMatrix<f64>, g_c: &DMatrix<f64>, t_k: f64) -> Result<DMatrix<f64>> {
    let n = phi.nrows();
    let x = invert_transition(phi)?;
    let mut e = DMatrix::zeros(n, n + g_c.ncols());
    e.view_mut((0, 0), (n, n)).fill_with_identity();
    e.columns_mut(n, g_c.ncols()).copy_from(&(x * g_c * t_k.sqrt()));
    Ok(e)
}

fn invert_transition(phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = condition_number(phi);
    if !(cond <= MAX_TRANSITION_COND) {
        return Err(Error::IllConditioned { what: "Φ_0^K".into(), cond, limit: MAX_TRANSITION_COND });
    }
    phi.clone()
        .try_inverse()
        .ok_or(Error::IllConditioned { what: "Φ_0^K".into(), cond, limit: MAX_TRANSITION_COND })
}

/// Stacks `(W^{1/2} ⊗ I_m)·[B_0; …; B_{r−1}]`.
pub fn weighted_stack(blocks: &[DMatrix<f64>], w_sqrt: &DMatrix<f64>) -> DMatrix<f64> {
    let r = blocks.len();
    let (m, n) = blocks[0].shape();
    let mut out = DMatrix::zeros(r * m, n);
    for i in 0..r {
        let mut acc = DMatrix::zeros(m, n);
        for (j, b) in blocks.iter().enumerate() {
            acc += b * w_sqrt[(i, j)];
        }
        out.view_mut((i * m, 0), (m, n)).copy_from(&acc);
    }
    out
}

/// Lie-Taylor information contribution over `(e₀, w₀)` from the Lie-jet
/// Jacobians `h[j] = ∂L^j h/∂e`, `l[j] = ∂L^j h/∂ℓ`.
pub fn lie_info_contribution(
    h: &[DMatrix<f64>],
    l: &[DMatrix<f64>],
    coupling: &CouplingMatrix,
    e: &DMatrix<f64>,
    mode: LandmarkMode,
) -> DMatrix<f64> {
    let sh = weighted_stack(h, &coupling.sqrt) * e;
    let c = match mode {
        LandmarkMode::Condition => sh,
        LandmarkMode::Marginalize => {
            let sl = weighted_stack(l, &coupling.sqrt);
            nullspace_projector(&sl).q.tr_mul(&sh)
        }
    };
    c.tr_mul(&c)
}

/// `M` mapping `(e₀, W)` to `(e_K, W)`: top row `[Φ_0^K, Γ]`, identity below.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationMatrix {
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

impl PropagationMatrix {
    /// Explicit path: `Γ = [Φ_1^K G_0, …, G_{K−1}]`.
    pub fn explicit(ltv: &[DiscreteLtv]) -> Self {
        let n = ltv[0].a.nrows();
        let nw = ltv[0].g.ncols();
        let k = ltv.len();
        let mut gamma = DMatrix::zeros(n, nw * k);
        let mut tail = DMatrix::identity(n, n);
        for j in (0..k).rev() {
            gamma.columns_mut(j * nw, nw).copy_from(&(&tail * &ltv[j].g));
            tail = tail * &ltv[j].a;
        }
        Self { phi: tail, gamma }
    }

    /// Lie path: `Γ = √t_K·G_c`.
    pub fn lie(phi: DMatrix<f64>, g_c: &DMatrix<f64>, t_k: f64) -> Self {
        Self { phi, gamma: g_c * t_k.sqrt() }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.phi.nrows();
        let nw = self.gamma.ncols();
        let mut m = DMatrix::identity(n + nw, n + nw);
        m.view_mut((0, 0), (n, n)).copy_from(&self.phi);
        m.view_mut((0, n), (n, nw)).copy_from(&self.gamma);
        m
    }
}

/// Propagated information reduced to the error state, plus the pieces the
/// gradient needs.
#[derive(Clone, Debug)]
pub struct Marginal {
    /// `S_K`
    pub s: DMatrix<f64>,
    /// `(Φ_0^K)⁻¹`
    pub x: DMatrix<f64>,
    /// Error rows of `M⁻¹[I; Z]`: maps `δe_K` to the minimizing `δe₀`.
    pub u: DMatrix<f64>,
    /// Noise rows of `M⁻¹[I; Z]`.
    pub z: DMatrix<f64>,
}

/// `Λ_K = M⁻ᵀΛ₀M⁻¹` by block back-substitution, then the Schur complement
/// onto the error block. The noise block is inverted by Cholesky with a
/// pseudo-inverse fallback.
pub fn marginalize(lambda0: &DMatrix<f64>, m: &PropagationMatrix) -> Result<Marginal> {
    let n = m.phi.nrows();
    let nw = m.gamma.ncols();
    let x = invert_transition(&m.phi)?;
    let y = &x * &m.gamma;
    let a = lambda0.view((0, 0), (n, n));
    let b = lambda0.view((0, n), (n, nw));
    let d = lambda0.view((n, n), (nw, nw));
    let ax = a * &x;
    let ay = a * &y;
    let lee = x.tr_mul(&ax);
    let lew = x.tr_mul(&(b - &ay));
    let bty = b.tr_mul(&y);
    let lww = d - &bty - bty.transpose() + y.tr_mul(&ay);
    let lww = symmetrize(&lww);
    let z = match lww.clone().cholesky() {
        Some(ch) => -ch.solve(&lew.transpose()),
        None => -sym_pinv(&lww) * lew.transpose(),
    };
    let s = symmetrize(&(lee + &lew * &z));
    let u = &x - &y * &z;
    crate::linalg::ensure_finite(&s, "S_K")?;
    Ok(Marginal { s, x, u, z })
}

/// Propagates the joint information through `M` and extracts `S_K`.
pub fn propagate_and_marginalize(joint: &JointInformation, m: &PropagationMatrix, t: f64) -> Result<InfoState> {
    if joint.n_noise() != m.gamma.ncols() || joint.n_err != m.phi.nrows() {
        return Err(Error::InvalidInput("joint information and propagation matrix disagree in size".into()));
    }
    Ok(InfoState { s: marginalize(&joint.lambda, m)?.s, t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_frobenius;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_ltv(rng: &mut ChaCha8Rng, n: usize, nw: usize, k: usize) -> Vec<DiscreteLtv> {
        (0..k)
            .map(|_| DiscreteLtv {
                a: DMatrix::identity(n, n) + random_matrix(rng, n, n) * 0.3,
                g: random_matrix(rng, n, nw),
            })
            .collect()
    }

    #[test]
    fn single_step_blocks() {
        let ltv = vec![DiscreteLtv { a: scalar(0.5), g: scalar(2.0) }];
        let b = build_batch_blocks(&ltv, &[scalar(1.0)], &[scalar(0.0)]).unwrap();
        assert_eq!(b.a_block, scalar(0.5));
        assert_eq!(b.g_block, scalar(2.0));
    }

    #[test]
    fn scalar_chain_blocks() {
        let ltv = vec![DiscreteLtv { a: scalar(1.0), g: scalar(1.0) }; 3];
        let h = vec![scalar(1.0); 3];
        let l = vec![scalar(0.0); 3];
        let b = build_batch_blocks(&ltv, &h, &l).unwrap();
        assert_eq!(b.a_block, DMatrix::from_element(3, 1, 1.0));
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(b.g_block, expected);
    }

    #[test]
    fn blocks_reproduce_recursive_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, nw, k) = (4, 2, 5);
        let ltv = random_ltv(&mut rng, n, nw, k);
        let h = vec![DMatrix::identity(n, n); k];
        let l = vec![DMatrix::zeros(n, 1); k];
        let b = build_batch_blocks(&ltv, &h, &l).unwrap();
        let e0 = random_matrix(&mut rng, n, 1);
        let w = random_matrix(&mut rng, nw * k, 1);
        let stacked = &b.a_block * &e0 + &b.g_block * &w;
        let mut e = e0.clone();
        for step in 0..k {
            e = &ltv[step].a * &e + &ltv[step].g * w.rows(step * nw, nw);
            let got = stacked.rows(step * n, n);
            assert!((got - &e).amax() <= 1e-12 * (1.0 + e.amax()));
        }
    }

    #[test]
    fn landmark_independent_scalar_contribution() {
        let ltv = vec![DiscreteLtv { a: scalar(1.0), g: scalar(1.0) }];
        let b = build_batch_blocks(&ltv, &[scalar(1.0)], &[DMatrix::zeros(1, 1)]).unwrap();
        let info = explicit_info_contribution(&b, LandmarkMode::Marginalize);
        assert_eq!(info, DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn coupling_examples() {
        let c = coupling_matrix(&[0.5, 1.0, 1.5, 2.0], 1).unwrap();
        assert_eq!(c.w, scalar(4.0));
        let c = coupling_matrix(&[1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(c.w, DMatrix::from_row_slice(2, 2, &[3.0, 6.0, 6.0, 14.0]));
        assert!((&c.sqrt * &c.sqrt - &c.w).norm() <= 1e-10 * c.w.norm());
        let c = coupling_matrix(&[1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(c.w[(2, 2)], 98.0 / 4.0);
        assert_eq!(c.w[(1, 2)], 36.0 / 2.0);
    }

    #[test]
    fn injection_examples() {
        let phi = DMatrix::identity(3, 3) * 2.0;
        let e = injection_matrix(&phi, &DMatrix::zeros(3, 2), 1.0).unwrap();
        assert_eq!(e.columns(0, 3).into_owned(), DMatrix::identity(3, 3));
        assert_eq!(e.columns(3, 2).norm(), 0.0);
        let e = injection_matrix(&scalar(1.0), &scalar(1.0), 4.0).unwrap();
        assert_eq!(e, DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
    }

    #[test]
    fn scalar_propagation_matches_kalman() {
        let m = PropagationMatrix { phi: scalar(1.0), gamma: scalar(1.0) };
        assert_eq!(m.dense(), DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        let joint = JointInformation::prior(&scalar(1.0), 1);
        let s = propagate_and_marginalize(&joint, &m, 1.0).unwrap();
        assert!((s.s[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_prior_keeps_measurement_information_only() {
        let m = PropagationMatrix { phi: scalar(1.0), gamma: scalar(1.0) };
        let joint = JointInformation::prior(&scalar(0.0), 1);
        let s = propagate_and_marginalize(&joint, &m, 1.0).unwrap();
        assert_eq!(s.s[(0, 0)], 0.0);
    }

    #[test]
    fn lie_contribution_reduces_to_explicit_for_single_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, nw) = (3, 2);
        let ltv = random_ltv(&mut rng, n, nw, 1);
        let h = random_matrix(&mut rng, 2, n);
        let b = build_batch_blocks(&ltv, &[h.clone()], &[DMatrix::zeros(2, 1)]).unwrap();
        let explicit = explicit_info_contribution(&b, LandmarkMode::Marginalize);
        // one measurement at t₁ = 1: W = [1], E = [I, Φ⁻¹G] reproduces [A G] after Φ
        let coupling = coupling_matrix(&[1.0], 1).unwrap();
        let hk = &h * &ltv[0].a;
        let e = injection_matrix(&ltv[0].a, &ltv[0].g, 1.0).unwrap();
        let lie = lie_info_contribution(&[hk], &[DMatrix::zeros(2, 1)], &coupling, &e, LandmarkMode::Marginalize);
        assert!(rel_frobenius(&lie, &explicit) < 1e-12);
    }

    #[test]
    fn toy_marginalized_information_annihilates_unobservable_direction() {
        // ẋ = u, h = ℓ − x: shifting e and ℓ̃ together is invisible
        let coupling = coupling_matrix(&[0.1, 0.2, 0.3], 2).unwrap();
        let h = vec![scalar(-1.0), scalar(0.0)];
        let l = vec![scalar(1.0), scalar(0.0)];
        let e = injection_matrix(&scalar(1.0), &scalar(1.0), 0.3).unwrap();
        let info = lie_info_contribution(&h, &l, &coupling, &e, LandmarkMode::Marginalize);
        assert!(info.amax() < 1e-14);
        let cond = lie_info_contribution(&h, &l, &coupling, &e, LandmarkMode::Condition);
        assert!(cond[(0, 0)] > 0.0);
    }

    fn dense_covariance_oracle(lambda0: &DMatrix<f64>, m: &PropagationMatrix) -> DMatrix<f64> {
        let cov = lambda0.clone().try_inverse().unwrap();
        let md = m.dense();
        let cov_k = &md * cov * md.transpose();
        let n = m.phi.nrows();
        cov_k.view((0, 0), (n, n)).into_owned().try_inverse().unwrap()
    }

    proptest! {
        #[test]
        fn coupling_is_psd(k in 1usize..12, r in 1usize..5, dt in 0.005f64..0.2) {
            let times: Vec<f64> = (1..=k).map(|i| i as f64 * dt).collect();
            let c = coupling_matrix(&times, r).unwrap();
            let min = c.w.clone().symmetric_eigenvalues().min();
            prop_assert!(min >= -1e-12 * c.w.norm());
            prop_assert!((&c.sqrt * &c.sqrt - &c.w).norm() <= 1e-10 * c.w.norm());
        }

        #[test]
        fn propagation_matches_covariance_domain(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, nw) = (4, 3);
            let f = random_matrix(&mut rng, n + nw + 2, n + nw);
            let lambda0 = f.tr_mul(&f) + DMatrix::identity(n + nw, n + nw) * 0.1;
            let m = PropagationMatrix {
                phi: DMatrix::identity(n, n) + random_matrix(&mut rng, n, n) * 0.3,
                gamma: random_matrix(&mut rng, n, nw),
            };
            let got = marginalize(&lambda0, &m).unwrap().s;
            let oracle = dense_covariance_oracle(&lambda0, &m);
            prop_assert!(rel_frobenius(&got, &oracle) <= 1e-9);
        }

        #[test]
        fn contribution_is_psd(seed in 0u64..100, k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, nw) = (3, 2);
            let ltv = random_ltv(&mut rng, n, nw, k);
            let h: Vec<_> = (0..k).map(|_| random_matrix(&mut rng, 2, n)).collect();
            let l: Vec<_> = (0..k).map(|_| random_matrix(&mut rng, 2, 2)).collect();
            let b = build_batch_blocks(&ltv, &h, &l).unwrap();
            for mode in [LandmarkMode::Marginalize, LandmarkMode::Condition] {
                let info = explicit_info_contribution(&b, mode);
                prop_assert!((&info - info.transpose()).amax() <= 1e-12 * (1.0 + info.amax()));
                let min = info.clone().symmetric_eigenvalues().min();
                prop_assert!(min >= -1e-9 * (1.0 + info.norm()));
            }
        }
    }
}
