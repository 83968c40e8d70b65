//! Lie derivatives of the observation along the nominal flow and the
//! Jacobians of every order, obtained by Taylor-mode propagation of a
//! dual-number perturbation of the initial error state.

use nalgebra::{DMatrix, DVector};

use super::System;
use crate::autodiff::{Dual, Ring, Sens, Taylor, JET_DIRS, MAX_SERIES};
use crate::error::{Error, Result};
use crate::linalg::Tm;

/// Highest supported number of Lie derivatives `r`.
pub const MAX_LIE_ORDER: usize = MAX_SERIES;

/// Scalar carrying error-state and landmark directions over a base `S`.
pub type Jet<S> = Dual<S, JET_DIRS>;

/// Values and Jacobians of `L⁰h … L^{r−1}h` at one landmark.
#[derive(Clone, Debug)]
pub struct LieJet {
    /// `values[j]` is `L^j h` (length `m`).
    pub values: Vec<DVector<f64>>,
    /// `h[j]` is `∂L^j h / ∂e₀⁺` (`m × err`).
    pub h: Vec<DMatrix<f64>>,
    /// `l[j]` is `∂L^j h / ∂ℓ` (`m × n_l`).
    pub l: Vec<DMatrix<f64>>,
}

/// Lie-jet blocks with forward tangents.
#[derive(Clone, Debug)]
pub(crate) struct JetBlocks {
    pub h: Vec<Tm>,
    pub l: Vec<Tm>,
}

pub(crate) fn check_order(r: usize) -> Result<()> {
    if r == 0 || r > MAX_LIE_ORDER {
        return Err(Error::Unsupported(format!(
            "Lie derivative count r = {r}; supported range is 1..={MAX_LIE_ORDER}"
        )));
    }
    Ok(())
}

fn check_dirs<Sy: System>(sys: &Sy) {
    let d = sys.dims();
    assert!(d.err + d.lm <= JET_DIRS, "error + landmark dimension exceeds jet directions");
}

/// `s ⊞ e` with `e` a symbolic zero carrying the error directions.
fn perturbed<S: Sens, Sy: System>(sys: &Sy, s: &[S]) -> Vec<Jet<S>> {
    let err = sys.dims().err;
    let base: Vec<Jet<S>> = s.iter().map(|v| Jet::constant(*v)).collect();
    let e: Vec<Jet<S>> = (0..err).map(|i| Jet::variable(S::zero(), i)).collect();
    sys.retract(&base, &e)
}

fn landmark_jet<S: Sens>(l: &[f64], offset: usize) -> Vec<Jet<S>> {
    l.iter().enumerate().map(|(i, v)| Jet::variable(S::cst(*v), offset + i)).collect()
}

/// Taylor series of the flow started at `s0 ⊞ e`, `r` coefficients.
pub(crate) fn flow_series<S: Sens, Sy: System>(
    sys: &Sy,
    s0: &[S],
    u: &[S],
    r: usize,
) -> Result<Vec<Taylor<Jet<S>>>> {
    check_order(r)?;
    check_dirs(sys);
    let start = perturbed(sys, s0);
    let uu: Vec<Taylor<Jet<S>>> =
        u.iter().map(|v| Taylor::constant(Jet::constant(*v), MAX_SERIES)).collect();
    let mut x: Vec<Taylor<Jet<S>>> = start.into_iter().map(|v| Taylor::constant(v, 1)).collect();
    for k in 0..r - 1 {
        let f = sys.field(&x, &uu);
        let inv = 1.0 / (k + 1) as f64;
        for (xi, fi) in x.iter_mut().zip(f.iter()) {
            xi.c[k + 1] = fi.c[k].scale(inv);
            xi.n = k + 2;
        }
    }
    Ok(x)
}

fn factorial(j: usize) -> f64 {
    (1..=j).map(|k| k as f64).product()
}

/// Splits observation series into per-order value/Jacobian blocks.
fn order_blocks<S: Sens>(
    out: &[Taylor<Jet<S>>],
    r: usize,
    err: usize,
    lm: usize,
) -> (Vec<Vec<S>>, Vec<Tm>, Vec<Tm>) {
    let m = out.len();
    let mut values = Vec::with_capacity(r);
    let mut hs = Vec::with_capacity(r);
    let mut ls = Vec::with_capacity(r);
    for j in 0..r {
        let f = factorial(j);
        let coeffs: Vec<Jet<S>> = out.iter().map(|o| o.c[j].scale(f)).collect();
        values.push(coeffs.iter().map(|c| c.v).collect());
        hs.push(Tm::from_fn(m, err, |i, k| coeffs[i].g[k]));
        ls.push(Tm::from_fn(m, lm, |i, k| coeffs[i].g[err + k]));
    }
    (values, hs, ls)
}

/// Lie-jet blocks of one landmark from a precomputed flow series.
pub(crate) fn landmark_jet_blocks<S: Sens, Sy: System>(
    sys: &Sy,
    series: &[Taylor<Jet<S>>],
    l: &[f64],
    r: usize,
) -> JetBlocks {
    let d = sys.dims();
    let lt: Vec<Taylor<Jet<S>>> =
        landmark_jet::<S>(l, d.err).into_iter().map(|v| Taylor::constant(v, MAX_SERIES)).collect();
    let out = sys.observe(series, &lt);
    let (_, h, l) = order_blocks(&out, r, d.err, d.lm);
    JetBlocks { h, l }
}

/// Per-component Lie-jet blocks for an affine observation: `h[i][j]` is the
/// Jacobian of `L^j h_i`, `l[j]` the landmark Jacobian `[L^j h_1 … L^j h_n]`.
pub(crate) fn affine_jet_blocks<S: Sens, Sy: System>(
    sys: &Sy,
    series: &[Taylor<Jet<S>>],
    r: usize,
) -> Option<(Vec<Vec<Tm>>, Vec<Tm>)> {
    let d = sys.dims();
    let comps = sys.affine_components(series)?;
    let mut h = Vec::with_capacity(comps.len());
    let mut vals = Vec::with_capacity(comps.len());
    for c in &comps {
        let (v, hc, _) = order_blocks(c, r, d.err, 0);
        h.push(hc);
        vals.push(v);
    }
    let l = (0..r)
        .map(|j| Tm::from_fn(d.meas, d.lm, |row, i| vals[i + 1][j][row]))
        .collect();
    Some((h, l))
}

/// Observation value and Jacobians at one state.
pub(crate) fn step_jacobians<S: Sens, Sy: System>(sys: &Sy, s: &[S], l: &[f64]) -> (Tm, Tm) {
    check_dirs(sys);
    let d = sys.dims();
    let x = perturbed(sys, s);
    let out = sys.observe(&x, &landmark_jet::<S>(l, d.err));
    let h = Tm::from_fn(d.meas, d.err, |i, k| out[i].g[k]);
    let lj = Tm::from_fn(d.meas, d.lm, |i, k| out[i].g[d.err + k]);
    (h, lj)
}

/// Component Jacobians `∂h_i/∂e` and the landmark Jacobian at one state.
pub(crate) fn step_affine_jacobians<S: Sens, Sy: System>(sys: &Sy, s: &[S]) -> Option<(Vec<Tm>, Tm)> {
    check_dirs(sys);
    let d = sys.dims();
    let x = perturbed(sys, s);
    let comps = sys.affine_components(&x)?;
    let h = comps.iter().map(|c| Tm::from_fn(d.meas, d.err, |i, k| c[i].g[k])).collect();
    let l = Tm::from_fn(d.meas, d.lm, |row, i| comps[i + 1][row].v);
    Some((h, l))
}

/// First `r` Lie derivatives of the observation of landmark `l` at
/// `(s0, u0)` and their Jacobians.
pub fn lie_jet<Sy: System>(sys: &Sy, s0: &[f64], u0: &[f64], l: &[f64], r: usize) -> Result<LieJet> {
    let series = flow_series::<f64, Sy>(sys, s0, u0, r)?;
    let d = sys.dims();
    let lt: Vec<Taylor<Jet<f64>>> =
        landmark_jet::<f64>(l, d.err).into_iter().map(|v| Taylor::constant(v, MAX_SERIES)).collect();
    let out = sys.observe(&series, &lt);
    let (values, h, lb) = order_blocks(&out, r, d.err, d.lm);
    Ok(LieJet {
        values: values.into_iter().map(DVector::from_vec).collect(),
        h: h.into_iter().map(|t| t.v).collect(),
        l: lb.into_iter().map(|t| t.v).collect(),
    })
}

/// Affine decomposition of the Lie jet: `h[i][j] = ∂L^j h_i/∂e₀⁺` and the
/// landmark-independent `l[j]`.
#[derive(Clone, Debug)]
pub struct AffineLieJet {
    pub h: Vec<Vec<DMatrix<f64>>>,
    pub l: Vec<DMatrix<f64>>,
}

pub fn affine_lie_jet<Sy: System>(sys: &Sy, s0: &[f64], u0: &[f64], r: usize) -> Result<AffineLieJet> {
    let series = flow_series::<f64, Sy>(sys, s0, u0, r)?;
    let (h, l) = affine_jet_blocks(sys, &series, r)
        .ok_or_else(|| Error::Unsupported("observation has no affine components".into()))?;
    Ok(AffineLieJet {
        h: h.into_iter().map(|v| v.into_iter().map(|t| t.v).collect()).collect(),
        l: l.into_iter().map(|t| t.v).collect(),
    })
}

/// Observation Jacobians `(H, L)` at a single state.
pub fn observation_jacobians<Sy: System>(sys: &Sy, s: &[f64], l: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (h, lj) = step_jacobians::<f64, Sy>(sys, s, l);
    (h.v, lj.v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{rk4_step, DynamicsParams, LinearSystem, Quadrotor};
    use crate::geom::{NavState, PlantState, Rotation};
    use crate::sensing::OrthoCamera;
    use nalgebra::Vector3;

    fn quad() -> Quadrotor {
        Quadrotor::new(DynamicsParams::default(), OrthoCamera::forward(0.8, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn toy_system_closed_form() {
        let sys = LinearSystem::toy_1d();
        let jet = lie_jet(&sys, &[0.3], &[2.0], &[1.5], 3).unwrap();
        assert_eq!(jet.values[0][0], 1.2);
        assert_eq!(jet.values[1][0], -2.0);
        assert_eq!(jet.values[2][0], 0.0);
        assert_eq!(jet.h[0][(0, 0)], -1.0);
        assert_eq!(jet.h[1][(0, 0)], 0.0);
        assert_eq!(jet.l[0][(0, 0)], 1.0);
        assert_eq!(jet.l[1][(0, 0)], 0.0);
    }

    #[test]
    fn unsupported_order_is_an_error() {
        let sys = LinearSystem::toy_1d();
        assert!(matches!(lie_jet(&sys, &[0.0], &[0.0], &[0.0], 5), Err(Error::Unsupported(_))));
        assert!(lie_jet(&sys, &[0.0], &[0.0], &[0.0], 0).is_err());
    }

    #[test]
    fn static_hover_has_zero_first_derivative() {
        let sys = quad();
        let x = sys.nav_state(PlantState::hover_at(Vector3::new(0.0, 0.0, 1.0)));
        let s = x.to_embedding();
        let jet = lie_jet(&sys, &s, &sys.hover_control(), &[4.0, 0.5, 1.2], 3).unwrap();
        assert!(jet.values[1].norm() < 1e-14);
    }

    #[test]
    fn order_zero_equals_direct_jacobians() {
        let sys = quad();
        let plant = PlantState {
            p: Vector3::new(0.2, -0.3, 1.0),
            v: Vector3::new(1.0, 0.2, -0.1),
            r: Rotation::exp(&Vector3::new(0.1, 0.05, 0.3)),
            omega: Vector3::new(0.1, -0.2, 0.05),
        };
        let s = sys.nav_state(plant).to_embedding();
        let l = [4.0, 1.0, 0.5];
        let jet = lie_jet(&sys, &s, &[9.0, 0.01, 0.0, -0.01], &l, 3).unwrap();
        let (h, lj) = observation_jacobians(&sys, &s, &l);
        assert_eq!(jet.h[0], h);
        assert_eq!(jet.l[0], lj);
        let direct = sys.observe(&s, &l);
        assert_eq!(jet.values[0].as_slice(), direct.as_slice());
    }

    #[test]
    fn first_order_jacobian_matches_flow_perturbation() {
        let sys = quad();
        let plant = PlantState {
            p: Vector3::new(0.2, -0.3, 1.0),
            v: Vector3::new(1.0, 0.2, -0.1),
            r: Rotation::exp(&Vector3::new(0.1, 0.05, 0.3)),
            omega: Vector3::new(0.1, -0.2, 0.05),
        };
        let nav = sys.nav_state(plant);
        let s = nav.to_embedding();
        let u = [9.5, 0.01, -0.02, 0.005];
        let l = [4.0, 1.0, 0.5];
        let jet = lie_jet(&sys, &s, &u, &l, 3).unwrap();
        // d/dt h along the flow from a perturbed start, via a tiny RK4 step
        let dhdt = |e: &[f64]| -> Vec<f64> {
            let s0 = sys.retract(&s, e);
            let dt = 1e-5;
            let a = sys.observe(&rk4_step(&sys, &s0, &u, dt), &l);
            let b = sys.observe(&rk4_step(&sys, &s0, &u, -dt), &l);
            a.iter().zip(b.iter()).map(|(x, y)| (x - y) / (2.0 * dt)).collect()
        };
        let base = dhdt(&[0.0; 21]);
        assert!((base[0] - jet.values[1][0]).abs() < 1e-6);
        let eps = 1e-4;
        for dir in 0..21 {
            let mut ep = [0.0; 21];
            ep[dir] = eps;
            let mut em = [0.0; 21];
            em[dir] = -eps;
            let (a, b) = (dhdt(&ep), dhdt(&em));
            for row in 0..2 {
                let fd = (a[row] - b[row]) / (2.0 * eps);
                let an = jet.h[1][(row, dir)];
                assert!((fd - an).abs() <= 1e-4 * (1.0 + an.abs()), "dir {dir}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn jacobian_conditions_hold_for_orthographic_camera() {
        let sys = quad();
        let plant = PlantState {
            p: Vector3::new(0.5, 0.3, 1.0),
            v: Vector3::new(0.7, -0.2, 0.1),
            r: Rotation::exp(&Vector3::new(-0.1, 0.2, 0.4)),
            omega: Vector3::new(0.2, 0.1, -0.1),
        };
        let s = NavState { ..sys.nav_state(plant) }.to_embedding();
        let u = [10.0, 0.02, 0.0, -0.01];
        let aff = affine_lie_jet(&sys, &s, &u, 4).unwrap();
        for l in [[3.0, 0.5, 1.0], [-2.0, 4.0, 0.0], [5.0, -1.0, 2.5]] {
            let jet = lie_jet(&sys, &s, &u, &l, 4).unwrap();
            for j in 0..4 {
                let mut rec = aff.h[0][j].clone();
                for i in 0..3 {
                    rec += &aff.h[i + 1][j] * l[i];
                }
                assert!((&rec - &jet.h[j]).amax() <= 1e-10 * (1.0 + jet.h[j].amax()));
                assert!((&aff.l[j] - &jet.l[j]).amax() <= 1e-10 * (1.0 + jet.l[j].amax()));
            }
        }
    }
}
