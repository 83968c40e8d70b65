//! Interval updates evaluated on a model: nominal integration, error
//! dynamics, per-landmark or affine information factors for either bundling
//! path, and forward sensitivities of the result with respect to the
//! interval's initial plant state and control.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::{coupling_matrix, marginalize, CouplingMatrix, JointInformation, LandmarkMode, PropagationMatrix};
use crate::autodiff::{Sens, Sens16, SENS_DIRS};
use crate::dynamics::{
    affine_jet_blocks, check_order, flow_series, landmark_jet_blocks, rk4_step, step_affine_jacobians,
    step_jacobians, System, MAX_TRANSITION_COND,
};
use crate::error::{Error, Result};
use crate::linalg::{condition_number, nullspace_tm, Tm, Ts};
use crate::sensing::{mass_coefficients_generic, CoefficientFn, LandmarkField, MassCoefficients};

/// How measurements inside an interval are bundled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bundling {
    /// Every measurement time with its own Jacobian and noise sample.
    Explicit,
    /// Taylor expansion of the observation along the flow from the start.
    #[default]
    Lie,
}

/// Visibility weighting of landmark contributions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisibilityMode {
    #[default]
    Smooth,
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalOptions {
    pub bundling: Bundling,
    pub mode: LandmarkMode,
    /// Number of Lie derivatives kept by the Lie path.
    pub r: usize,
    /// Use the affine aggregation when the observation supports it.
    pub affine: bool,
    pub visibility: VisibilityMode,
}

impl Default for IntervalOptions {
    fn default() -> Self {
        Self {
            bundling: Bundling::Lie,
            mode: LandmarkMode::Marginalize,
            r: 3,
            affine: true,
            visibility: VisibilityMode::Smooth,
        }
    }
}

/// Landmark information for an interval update.
#[derive(Clone)]
pub enum Landmarks<'a> {
    /// Explicit points, each of the system's landmark dimension.
    Points(Vec<&'a [f64]>),
    /// Fixed mass coefficients.
    Mass(&'a DMatrix<f64>),
    /// Mass coefficients as a function of the interval's start embedding.
    Field(&'a CoefficientFn),
}

impl<'a> Landmarks<'a> {
    pub fn none() -> Self {
        Landmarks::Points(Vec::new())
    }

    pub fn points(v: &'a [Vector3<f64>]) -> Self {
        Landmarks::Points(v.iter().map(|l| l.as_slice()).collect())
    }

    pub fn rows(v: &'a [Vec<f64>]) -> Self {
        Landmarks::Points(v.iter().map(|l| l.as_slice()).collect())
    }

    pub fn from_field(f: &'a LandmarkField) -> Self {
        match f {
            LandmarkField::FiniteSet(v) => Self::points(v),
            LandmarkField::CoefficientField(f) => Landmarks::Field(f.as_ref()),
        }
    }

    pub fn from_mass(m: &'a MassCoefficients) -> Self {
        Landmarks::Mass(&m.0)
    }
}

/// Sensitivities of one interval update with respect to the local inputs
/// `(δx₀ in plant tangent coordinates, δu)`.
#[derive(Clone, Debug)]
pub struct LocalGradient {
    /// `∂S_K/∂ζ_t` for the measurement and propagation terms (prior held fixed).
    pub ds: Vec<DMatrix<f64>>,
    /// `∂(measurement information e₀ block)/∂ζ_t`.
    pub dinfo_e0: Vec<DMatrix<f64>>,
    /// Plant-tangent Jacobian of the end state (`plant × dirs`).
    pub dx_end: DMatrix<f64>,
    /// `∂(Σ σ at the end state)/∂ζ_t`.
    pub dend_visibility: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct IntervalResult {
    /// Posterior information `S_K`.
    pub s: DMatrix<f64>,
    /// `dS_K = Uᵀ·dS₀·U` for prior perturbations.
    pub u: DMatrix<f64>,
    /// Nominal embeddings at steps `0..=K`.
    pub states: Vec<Vec<f64>>,
    /// Measurement information on the start error, before propagation.
    pub info_e0: DMatrix<f64>,
    /// Total visibility weight at the start state.
    pub visible: f64,
    /// Total smooth visibility `Σ σ` at the end state.
    pub end_visibility: f64,
    pub grad: Option<LocalGradient>,
}

enum InfoTerms {
    Factors(Vec<(Ts, Tm)>),
    Affine { eta: Tm, comps: Vec<Tm> },
}

struct Terms {
    phi: Tm,
    gamma: Tm,
    info: InfoTerms,
    states: Vec<Vec<f64>>,
    dx_end: Option<DMatrix<f64>>,
    visible: f64,
    end_visibility: Ts,
}

/// Fixed ingredients of interval updates on one system and grid.
pub struct IntervalContext<'a, Sy: System> {
    pub sys: &'a Sy,
    pub dt: f64,
    pub steps: usize,
    pub options: IntervalOptions,
    /// When false only the nominal states and visibility are computed.
    pub information: bool,
    coupling: CouplingMatrix,
}

impl<'a, Sy: System> IntervalContext<'a, Sy> {
    pub fn new(sys: &'a Sy, dt: f64, steps: usize, options: IntervalOptions) -> Result<Self> {
        if !(dt > 0.0) || steps == 0 {
            return Err(Error::InvalidInput(format!("interval needs dt > 0 and K ≥ 1 (dt = {dt}, K = {steps})")));
        }
        check_order(options.r)?;
        let d = sys.dims();
        if d.plant + d.ctrl > SENS_DIRS {
            return Err(Error::Unsupported(format!(
                "plant tangent plus control dimension {} exceeds {SENS_DIRS}",
                d.plant + d.ctrl
            )));
        }
        let times: Vec<f64> = (1..=steps).map(|k| k as f64 * dt).collect();
        let coupling = coupling_matrix(&times, options.r)?;
        Ok(Self { sys, dt, steps, options, information: true, coupling })
    }

    /// Skips error dynamics and landmark information.
    pub fn without_information(mut self) -> Self {
        self.information = false;
        self
    }

    pub fn coupling(&self) -> &CouplingMatrix {
        &self.coupling
    }

    pub fn interval_length(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Number of local sensitivity directions (`plant + ctrl`).
    pub fn local_dirs(&self) -> usize {
        let d = self.sys.dims();
        d.plant + d.ctrl
    }

    /// Interval update without sensitivities.
    pub fn update(&self, s_prior: &DMatrix<f64>, x0: &[f64], u: &[f64], lms: &Landmarks) -> Result<IntervalResult> {
        let terms = self.terms::<f64>(x0, u, lms)?;
        self.finish(s_prior, terms, false)
    }

    /// Interval update with sensitivities to the local plant state and control.
    pub fn update_with_gradient(
        &self,
        s_prior: &DMatrix<f64>,
        x0: &[f64],
        u: &[f64],
        lms: &Landmarks,
    ) -> Result<IntervalResult> {
        let terms = self.terms::<Sens16>(x0, u, lms)?;
        self.finish(s_prior, terms, true)
    }

    fn uses_affine(&self, x0: &[f64], lms: &Landmarks) -> Result<bool> {
        let capable = self.sys.affine_components::<f64>(x0).is_some();
        match lms {
            Landmarks::Points(_) => Ok(self.options.affine && capable),
            _ if capable => Ok(true),
            _ => Err(Error::Unsupported("mass coefficients need an observation affine in the landmark".into())),
        }
    }

    fn weight<S: Sens>(&self, s0: &[S], x0: &[f64], l: &[f64]) -> S {
        match self.options.visibility {
            VisibilityMode::Smooth => {
                let (w, degenerate) = self.sys.visibility_sq(s0, l);
                if degenerate {
                    S::zero()
                } else {
                    w
                }
            }
            VisibilityMode::Hard => S::cst(if self.sys.hard_visible(x0, l) { 1.0 } else { 0.0 }),
        }
    }

    fn nullspace(&self, l: &Tm) -> Option<Tm> {
        match self.options.mode {
            LandmarkMode::Condition => None,
            LandmarkMode::Marginalize => {
                let (ns, q) = nullspace_tm(l);
                if !ns.is_smooth() {
                    log::debug!("rank-deficient landmark Jacobian (rank {}); gradient is not smooth here", ns.rank);
                }
                Some(q)
            }
        }
    }

    fn terms<S: Sens>(&self, x0: &[f64], u0: &[f64], lms: &Landmarks) -> Result<Terms> {
        let sys = self.sys;
        let d = sys.dims();
        let (n, k) = (d.err, self.steps);
        let nd = S::DIRS;
        let base: Vec<S> = x0.iter().map(|v| S::cst(*v)).collect();
        let s0 = if nd == 0 {
            base
        } else {
            let dirs: Vec<S> = (0..d.plant).map(|i| S::seed(0.0, i)).collect();
            sys.perturb_plant(&base, &dirs)
        };
        let u: Vec<S> = u0.iter().enumerate().map(|(i, v)| S::seed(*v, d.plant + i)).collect();

        let mut states = vec![s0];
        for step in 1..=k {
            let next = rk4_step(sys, &states[step - 1], &u, self.dt);
            if !next.iter().all(|v| v.re().is_finite()) {
                return Err(Error::NonFinite { step, what: "nominal integration".into() });
            }
            states.push(next);
        }

        let mut visible = 0.0;
        let (phi, gamma, info) = if self.information {
            self.information_terms(x0, &states, &u, lms, &mut visible)?
        } else {
            (Tm::identity(n, nd), Tm::zeros(n, d.noise, nd), InfoTerms::Factors(Vec::new()))
        };
        let mut end_visibility = S::zero();
        if let Landmarks::Points(pts) = lms {
            for l in pts {
                end_visibility += sys.visibility(&states[k], l);
            }
        }

        let dx_end = (nd > 0).then(|| {
            let end = &states[k];
            let vals: Vec<f64> = end.iter().map(|v| v.re()).collect();
            let local = d.plant + d.ctrl;
            let mut m = DMatrix::zeros(d.plant, local);
            for t in 0..local {
                let ds: Vec<f64> = end.iter().map(|v| v.tangent(t)).collect();
                let col = sys.plant_tangent(&vals, &ds);
                m.column_mut(t).copy_from_slice(&col);
            }
            m
        });
        let states = states.iter().map(|s| s.iter().map(|v| v.re()).collect()).collect();
        Ok(Terms {
            phi,
            gamma,
            info,
            states,
            dx_end,
            visible,
            end_visibility: Ts::from_sens(end_visibility),
        })
    }

    #[allow(clippy::type_complexity)]
    fn information_terms<S: Sens>(
        &self,
        x0: &[f64],
        states: &[Vec<S>],
        u: &[S],
        lms: &Landmarks,
        visible: &mut f64,
    ) -> Result<(Tm, Tm, InfoTerms)> {
        let sys = self.sys;
        let d = sys.dims();
        let (n, k) = (d.err, self.steps);
        let nd = S::DIRS;
        let a_step = |s: &[S]| -> Tm {
            let ac = Tm::from_row_major(n, n, &sys.error_jacobian(s, u));
            Tm::identity(n, nd).lin(1.0, &ac, self.dt)
        };
        let g_cont = |s: &[S]| Tm::from_row_major(n, d.noise, &sys.noise_input(s));
        let a_blocks: Vec<Tm> = states[..k].iter().map(|s| a_step(s)).collect();
        let explicit = self.options.bundling == Bundling::Explicit;
        let g_blocks: Vec<Tm> = if explicit {
            states[..k].iter().map(|s| g_cont(s).scale(self.dt.sqrt())).collect()
        } else {
            Vec::new()
        };
        let (phi, gamma) = if explicit {
            let mut tail = Tm::identity(n, nd);
            let mut parts = vec![Tm::zeros(n, d.noise, nd); k];
            for j in (0..k).rev() {
                parts[j] = tail.mul(&g_blocks[j]);
                tail = tail.mul(&a_blocks[j]);
            }
            (tail, Tm::hcat(&parts))
        } else {
            let mut phi = Tm::identity(n, nd);
            for a in &a_blocks {
                phi = a.mul(&phi);
            }
            (phi, g_cont(&states[0]).scale(self.interval_length().sqrt()))
        };
        let cond = condition_number(&phi.v);
        if !(cond <= MAX_TRANSITION_COND) {
            return Err(Error::IllConditioned { what: "Φ_0^K".into(), cond, limit: MAX_TRANSITION_COND });
        }

        let affine = self.uses_affine(x0, lms)?;
        let info = if affine {
            let eta = match lms {
                Landmarks::Points(pts) => {
                    let ws: Vec<S> = pts.iter().map(|l| self.weight(&states[0], x0, l)).collect();
                    *visible = ws.iter().map(|w| w.re()).sum();
                    Tm::from_row_major(d.lm + 1, d.lm + 1, &mass_coefficients_generic(&ws, pts, d.lm))
                }
                Landmarks::Mass(m) => Tm::constant((*m).clone(), nd),
                Landmarks::Field(f) => Tm::constant(f(x0).0, nd),
            };
            if eta.v.amax() == 0.0 {
                InfoTerms::Factors(Vec::new())
            } else {
                let comps = if explicit {
                    self.explicit_affine_factors(&states, &a_blocks, &g_blocks)
                } else {
                    self.lie_affine_factors(&states[0], u, &phi, &gamma)?
                };
                InfoTerms::Affine { eta, comps }
            }
        } else {
            let pts = match lms {
                Landmarks::Points(p) => p,
                _ => unreachable!("non-point landmarks always take the affine path"),
            };
            let mut factors = Vec::new();
            let mut series = None;
            let mut e_inj = None;
            for l in pts {
                let w = self.weight(&states[0], x0, l);
                *visible += w.re();
                if w.re() <= 0.0 {
                    continue;
                }
                let c = if explicit {
                    self.explicit_factor(&states, l, &a_blocks, &g_blocks)
                } else {
                    if series.is_none() {
                        series = Some(flow_series(sys, &states[0], u, self.options.r)?);
                        e_inj = Some(injection(&phi, &gamma)?);
                    }
                    let jb = landmark_jet_blocks(sys, series.as_ref().unwrap(), l, self.options.r);
                    let sh = stack_weighted(&jb.h, &self.coupling.sqrt);
                    let sl = stack_weighted(&jb.l, &self.coupling.sqrt);
                    project(&self.nullspace(&sl), &sh).mul(e_inj.as_ref().unwrap())
                };
                factors.push((Ts::from_sens(w), c));
            }
            InfoTerms::Factors(factors)
        };
        Ok((phi, gamma, info))
    }

    /// `Qᵀ·Hblock·[Ablock Gblock]` for one landmark via a Horner sweep.
    fn explicit_factor<S: Sens>(&self, states: &[Vec<S>], l: &[f64], a: &[Tm], g: &[Tm]) -> Tm {
        let k = self.steps;
        let (hs, ls): (Vec<Tm>, Vec<Tm>) = (1..=k).map(|i| step_jacobians(self.sys, &states[i], l)).unzip();
        let q = self.nullspace(&Tm::vcat(&ls));
        let m = hs[0].nrows();
        let y: Vec<Tm> = hs.iter().enumerate().map(|(i, h)| project_rows(&q, i * m, k * m, h)).collect();
        horner(&y, a, g)
    }

    fn explicit_affine_factors<S: Sens>(&self, states: &[Vec<S>], a: &[Tm], g: &[Tm]) -> Vec<Tm> {
        let k = self.steps;
        let mut comps: Vec<Vec<Tm>> = Vec::new();
        let mut ls = Vec::with_capacity(k);
        for s in &states[1..=k] {
            let (h, l) = step_affine_jacobians(self.sys, s).expect("affine capability checked");
            comps.push(h);
            ls.push(l);
        }
        let q = self.nullspace(&Tm::vcat(&ls));
        let m = ls[0].nrows();
        (0..comps[0].len())
            .map(|i| {
                let y: Vec<Tm> =
                    (0..k).map(|step| project_rows(&q, step * m, k * m, &comps[step][i])).collect();
                horner(&y, a, g)
            })
            .collect()
    }

    fn lie_affine_factors<S: Sens>(&self, s0: &[S], u: &[S], phi: &Tm, gamma: &Tm) -> Result<Vec<Tm>> {
        let series = flow_series(self.sys, s0, u, self.options.r)?;
        let (h, l) = affine_jet_blocks(self.sys, &series, self.options.r).expect("affine capability checked");
        let e = injection(phi, gamma)?;
        let q = self.nullspace(&stack_weighted(&l, &self.coupling.sqrt));
        Ok(h.iter().map(|hi| project(&q, &stack_weighted(hi, &self.coupling.sqrt)).mul(&e)).collect())
    }

    fn finish(&self, s_prior: &DMatrix<f64>, terms: Terms, grad: bool) -> Result<IntervalResult> {
        let n = self.sys.dims().err;
        let nw = terms.gamma.ncols();
        let mut lambda0 = JointInformation::prior(s_prior, nw).lambda;
        let mut info_e0 = DMatrix::zeros(n, n);
        match &terms.info {
            InfoTerms::Factors(fs) => {
                for (w, c) in fs {
                    lambda0.gemm_tr(w.v, &c.v, &c.v, 1.0);
                    let ce = c.v.columns(0, n);
                    info_e0.gemm_tr(w.v, &ce, &ce, 1.0);
                }
            }
            InfoTerms::Affine { eta, comps } => {
                for (a, ca) in comps.iter().enumerate() {
                    let mixed = mix(&eta.v, a, comps.iter().map(|c| &c.v));
                    lambda0.gemm_tr(1.0, &ca.v, &mixed, 1.0);
                    info_e0.gemm_tr(1.0, &ca.v.columns(0, n), &mixed.columns(0, n), 1.0);
                }
            }
        }
        let m = PropagationMatrix { phi: terms.phi.v.clone(), gamma: terms.gamma.v.clone() };
        let marg = marginalize(&lambda0, &m)?;
        let info_e0 = crate::linalg::symmetrize(&info_e0);

        let grad = if grad {
            let nd = self.local_dirs();
            let mut nmat = DMatrix::zeros(n + nw, n);
            nmat.rows_mut(0, n).copy_from(&marg.u);
            nmat.rows_mut(n, nw).copy_from(&marg.z);
            let mut ds: Vec<DMatrix<f64>> = (0..nd)
                .map(|t| {
                    let xt = terms.phi.tangent(t) * &marg.u + terms.gamma.tangent(t) * &marg.z;
                    let sx = &marg.s * xt;
                    -(&sx + sx.transpose())
                })
                .collect();
            let mut dinfo = vec![DMatrix::zeros(n, n); nd];
            let sym_add = |acc: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, k: f64| {
                // acc += k·(aᵀb + bᵀa)
                let t = a.tr_mul(b) * k;
                *acc += &t + t.transpose();
            };
            match &terms.info {
                InfoTerms::Factors(fs) => {
                    for (w, c) in fs {
                        let p = &c.v * &nmat;
                        let pp = p.tr_mul(&p);
                        let ce = c.v.columns(0, n).into_owned();
                        let cc = ce.tr_mul(&ce);
                        for t in 0..nd {
                            let dw = w.tangent(t);
                            if dw != 0.0 {
                                ds[t] += &pp * dw;
                                dinfo[t] += &cc * dw;
                            }
                            if !c.is_const() {
                                let dp = &c.d[t] * &nmat;
                                sym_add(&mut ds[t], &dp, &p, w.v);
                                sym_add(&mut dinfo[t], &c.d[t].columns(0, n).into_owned(), &ce, w.v);
                            }
                        }
                    }
                }
                InfoTerms::Affine { eta, comps } => {
                    let ps: Vec<DMatrix<f64>> = comps.iter().map(|c| &c.v * &nmat).collect();
                    let ces: Vec<DMatrix<f64>> = comps.iter().map(|c| c.v.columns(0, n).into_owned()).collect();
                    for a in 0..comps.len() {
                        let gp = mix(&eta.v, a, ps.iter());
                        let gc = mix(&eta.v, a, ces.iter());
                        for t in 0..nd {
                            if !comps[a].is_const() {
                                let dp = &comps[a].d[t] * &nmat;
                                sym_add(&mut ds[t], &dp, &gp, 1.0);
                                sym_add(&mut dinfo[t], &comps[a].d[t].columns(0, n).into_owned(), &gc, 1.0);
                            }
                            if !eta.is_const() {
                                let dg = mix(&eta.d[t], a, ps.iter());
                                ds[t].gemm_tr(1.0, &ps[a], &dg, 1.0);
                                let dgc = mix(&eta.d[t], a, ces.iter());
                                dinfo[t].gemm_tr(1.0, &ces[a], &dgc, 1.0);
                            }
                        }
                    }
                }
            }
            let plant = self.sys.dims().plant;
            Some(LocalGradient {
                ds,
                dinfo_e0: dinfo,
                dx_end: terms.dx_end.unwrap_or_else(|| DMatrix::zeros(plant, nd)),
                dend_visibility: (0..nd).map(|t| terms.end_visibility.tangent(t)).collect(),
            })
        } else {
            None
        };
        Ok(IntervalResult {
            s: marg.s,
            u: marg.u,
            states: terms.states,
            info_e0,
            visible: terms.visible,
            end_visibility: terms.end_visibility.v,
            grad,
        })
    }
}

/// `Σ_b η_ab·M_b`
fn mix<'m>(eta: &DMatrix<f64>, a: usize, ms: impl Iterator<Item = &'m DMatrix<f64>>) -> DMatrix<f64> {
    let mut acc: Option<DMatrix<f64>> = None;
    for (b, m) in ms.enumerate() {
        let k = eta[(a, b)];
        match acc.as_mut() {
            None => acc = Some(m * k),
            Some(x) => {
                if k != 0.0 {
                    *x += m * k;
                }
            }
        }
    }
    acc.expect("at least one component")
}

/// `E = [I, Φ⁻¹Γ]` with tangents.
fn injection(phi: &Tm, gamma: &Tm) -> Result<Tm> {
    let n = phi.nrows();
    let x = phi
        .v
        .clone()
        .try_inverse()
        .ok_or(Error::IllConditioned { what: "Φ_0^K".into(), cond: f64::INFINITY, limit: MAX_TRANSITION_COND })?;
    let xg = x.clone() * &gamma.v;
    let d = if phi.is_const() && gamma.is_const() {
        Vec::new()
    } else {
        (0..phi.nd.max(gamma.nd))
            .map(|t| &x * (gamma.tangent(t) - phi.tangent(t) * &xg))
            .collect()
    };
    let xg = Tm { v: xg, d, nd: phi.nd.max(gamma.nd) };
    Ok(Tm::hcat(&[Tm::identity(n, xg.nd), xg]))
}

/// `(W^{1/2} ⊗ I)·[B_0; …; B_{r−1}]` with tangents.
fn stack_weighted(blocks: &[Tm], w_sqrt: &DMatrix<f64>) -> Tm {
    let r = blocks.len();
    let parts: Vec<Tm> = (0..r)
        .map(|i| {
            let mut acc = blocks[0].scale(w_sqrt[(i, 0)]);
            for (j, b) in blocks.iter().enumerate().skip(1) {
                acc = acc.lin(1.0, b, w_sqrt[(i, j)]);
            }
            acc
        })
        .collect();
    Tm::vcat(&parts)
}

fn project(q: &Option<Tm>, m: &Tm) -> Tm {
    match q {
        Some(q) => q.tr_mul(m),
        None => m.clone(),
    }
}

/// `Q_kᵀ·H_k` where `Q_k` are rows `start..start+m` of `Q` (identity when
/// conditioning).
fn project_rows(q: &Option<Tm>, start: usize, total: usize, h: &Tm) -> Tm {
    match q {
        Some(q) => q.rows(start, h.nrows()).tr_mul(h),
        None => {
            let mut parts = Vec::with_capacity(3);
            if start > 0 {
                parts.push(Tm::zeros(start, h.ncols(), h.nd));
            }
            parts.push(h.clone());
            let rest = total - start - h.nrows();
            if rest > 0 {
                parts.push(Tm::zeros(rest, h.ncols(), h.nd));
            }
            Tm::vcat(&parts)
        }
    }
}

/// `[Σ_k Y_k Φ_0^k, Σ_{k>j} Y_k Φ_{j+1}^k G_j …]` for `Y_k = y[k−1]`.
fn horner(y: &[Tm], a: &[Tm], g: &[Tm]) -> Tm {
    let k = y.len();
    let mut z = y[k - 1].clone();
    let mut w = vec![z.mul(&g[k - 1])];
    for m in (1..k).rev() {
        z = y[m - 1].add(&z.mul(&a[m]));
        w.push(z.mul(&g[m - 1]));
    }
    w.push(z.mul(&a[0]));
    w.reverse();
    Tm::hcat(&w)
}

/// Information after each interval of a trajectory and, optionally, its
/// sensitivities to the flattened controls.
#[derive(Clone, Debug)]
pub struct TrajectoryRun {
    /// `S` at the end of every interval.
    pub infos: Vec<DMatrix<f64>>,
    /// Measurement information on each interval's start error.
    pub info_e0: Vec<DMatrix<f64>>,
    /// Visibility weight at each interval start.
    pub visible: Vec<f64>,
    /// Smooth `Σ σ` at each interval end.
    pub end_visibility: Vec<f64>,
    /// Nominal embeddings at every grid step.
    pub states: Vec<Vec<f64>>,
    pub grad: Option<TrajectoryGradient>,
}

#[derive(Clone, Debug)]
pub struct TrajectoryGradient {
    /// `ds[i][g] = ∂S_i/∂θ_g`
    pub ds: Vec<Vec<DMatrix<f64>>>,
    pub dinfo_e0: Vec<Vec<DMatrix<f64>>>,
    /// `dend_visibility[i][g]`
    pub dend_visibility: Vec<Vec<f64>>,
    /// Plant-tangent Jacobian of the final state (`plant × n_θ`).
    pub dx_final: DMatrix<f64>,
}

/// Runs interval updates across consecutive intervals with piecewise
/// constant controls, chaining forward sensitivities.
pub fn run_trajectory<Sy: System>(
    ctx: &IntervalContext<Sy>,
    x0: &[f64],
    controls: &[Vec<f64>],
    s0: &DMatrix<f64>,
    lms: &Landmarks,
    grad: bool,
) -> Result<TrajectoryRun> {
    let d = ctx.sys.dims();
    let n_theta = d.ctrl * controls.len();
    let nd = ctx.local_dirs();
    let mut s = s0.clone();
    let mut x = x0.to_vec();
    let mut out = TrajectoryRun {
        infos: Vec::new(),
        info_e0: Vec::new(),
        visible: Vec::new(),
        end_visibility: Vec::new(),
        states: vec![x0.to_vec()],
        grad: None,
    };
    let mut ds: Vec<DMatrix<f64>> = Vec::new();
    let mut dx = DMatrix::zeros(d.plant, n_theta);
    let mut g = TrajectoryGradient {
        ds: Vec::new(),
        dinfo_e0: Vec::new(),
        dend_visibility: Vec::new(),
        dx_final: DMatrix::zeros(0, 0),
    };
    for (i, u) in controls.iter().enumerate() {
        let res = if grad {
            ctx.update_with_gradient(&s, &x, u, lms)
        } else {
            ctx.update(&s, &x, u, lms)
        }
        .map_err(|e| e.at_interval(i))?;
        if let Some(lg) = &res.grad {
            // dloc = [dx; one-hot control block]
            let active = d.ctrl * (i + 1);
            let mut dloc = DMatrix::zeros(nd, n_theta);
            dloc.view_mut((0, 0), (d.plant, n_theta)).copy_from(&dx);
            for c in 0..d.ctrl {
                dloc[(d.plant + c, d.ctrl * i + c)] = 1.0;
            }
            let mut ds_new = Vec::with_capacity(n_theta);
            let mut dinfo_new = Vec::with_capacity(n_theta);
            let mut dvis = Vec::with_capacity(n_theta);
            for gi in 0..n_theta {
                let mut acc = if gi < ds.len() && gi < d.ctrl * i {
                    res.u.tr_mul(&(&ds[gi] * &res.u))
                } else {
                    DMatrix::zeros(d.err, d.err)
                };
                let mut inf = DMatrix::zeros(d.err, d.err);
                let mut vis = 0.0;
                if gi < active {
                    for t in 0..nd {
                        let c = dloc[(t, gi)];
                        if c != 0.0 {
                            acc += &lg.ds[t] * c;
                            inf += &lg.dinfo_e0[t] * c;
                            vis += lg.dend_visibility[t] * c;
                        }
                    }
                }
                ds_new.push(acc);
                dinfo_new.push(inf);
                dvis.push(vis);
            }
            dx = &lg.dx_end * dloc;
            ds = ds_new.clone();
            g.ds.push(ds_new);
            g.dinfo_e0.push(dinfo_new);
            g.dend_visibility.push(dvis);
        }
        s = res.s;
        x = res.states.last().expect("end state").clone();
        out.infos.push(s.clone());
        out.info_e0.push(res.info_e0);
        out.visible.push(res.visible);
        out.end_visibility.push(res.end_visibility);
        out.states.extend(res.states.into_iter().skip(1));
    }
    if grad {
        g.dx_final = dx;
        out.grad = Some(g);
    }
    Ok(out)
}

/// One interval update `S₀ → S_K` over a finite landmark set.
pub fn interval_update<Sy: System>(
    sys: &Sy,
    s0: &DMatrix<f64>,
    x0: &[f64],
    u0: &[f64],
    landmarks: &Landmarks,
    dt: f64,
    steps: usize,
    options: IntervalOptions,
) -> Result<DMatrix<f64>> {
    let options = IntervalOptions { affine: false, ..options };
    Ok(IntervalContext::new(sys, dt, steps, options)?.update(s0, x0, u0, landmarks)?.s)
}

/// One interval update driven by mass coefficients through the affine
/// decomposition of the observation.
pub fn affine_interval_update<Sy: System>(
    sys: &Sy,
    s0: &DMatrix<f64>,
    x0: &[f64],
    u0: &[f64],
    eta: &MassCoefficients,
    dt: f64,
    steps: usize,
    options: IntervalOptions,
) -> Result<DMatrix<f64>> {
    let options = IntervalOptions { affine: true, ..options };
    let ctx = IntervalContext::new(sys, dt, steps, options)?;
    Ok(ctx.update(s0, x0, u0, &Landmarks::from_mass(eta))?.s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{discretize, linearize_error, observation_jacobians, DynamicsParams, Quadrotor};
    use crate::geom::{ControlInput, NavState, PlantState, Rotation};
    use crate::linalg::rel_frobenius;
    use crate::sensing::OrthoCamera;
    use crate::siif::{build_batch_blocks, explicit_info_contribution};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad() -> Quadrotor {
        Quadrotor::new(DynamicsParams::default(), OrthoCamera::forward(0.8, 0.02).unwrap()).unwrap()
    }

    fn scene(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<Vector3<f64>>) {
        let sys = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plant = PlantState {
            p: Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0),
            v: Vector3::new(rng.gen_range(0.5..1.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.2)),
            r: Rotation::exp(&Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.5..0.5))),
            omega: Vector3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)),
        };
        let x0 = sys.nav_state(plant).to_embedding();
        let u = vec![9.81 + rng.gen_range(-0.5..0.5), rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01)];
        let lms = (0..n)
            .map(|_| Vector3::new(rng.gen_range(3.0..8.0), rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..3.0)))
            .collect();
        (x0, u, lms)
    }

    fn opts(bundling: Bundling, affine: bool) -> IntervalOptions {
        IntervalOptions { bundling, affine, ..IntervalOptions::default() }
    }

    #[test]
    fn explicit_engine_matches_block_reference() {
        let sys = quad();
        let (x0, u, lms) = scene(1, 3);
        let (dt, k) = (0.02, 4);
        let s0 = DMatrix::identity(21, 21) / 0.3;
        let ctx = IntervalContext::new(&sys, dt, k, opts(Bundling::Explicit, false)).unwrap();
        let res = ctx.update(&s0, &x0, &u, &Landmarks::points(&lms)).unwrap();
        let ltv: Vec<_> = res.states[..k]
            .iter()
            .map(|s| {
                let nav = NavState::from_embedding(s);
                discretize(&linearize_error(&nav.plant, &ControlInput::from_slice(&u), &sys.params), dt).unwrap()
            })
            .collect();
        let m = PropagationMatrix::explicit(&ltv);
        let mut joint = JointInformation::prior(&s0, m.gamma.ncols());
        for l in &lms {
            let (h, lj): (Vec<_>, Vec<_>) =
                res.states[1..].iter().map(|s| observation_jacobians(&sys, s, l.as_slice())).unzip();
            let blocks = build_batch_blocks(&ltv, &h, &lj).unwrap();
            let w = sys.visibility_sq::<f64>(&x0, l.as_slice()).0;
            joint.add_scaled(&explicit_info_contribution(&blocks, LandmarkMode::Marginalize), w);
        }
        let reference = marginalize(&joint.lambda, &m).unwrap().s;
        assert!(rel_frobenius(&res.s, &reference) < 1e-10, "{}", rel_frobenius(&res.s, &reference));
    }

    #[test]
    fn affine_matches_per_landmark() {
        let sys = quad();
        let (x0, u, lms) = scene(2, 12);
        let s0 = DMatrix::identity(21, 21) / 0.3;
        for b in [Bundling::Explicit, Bundling::Lie] {
            let per = IntervalContext::new(&sys, 0.02, 7, opts(b, false)).unwrap();
            let aff = IntervalContext::new(&sys, 0.02, 7, opts(b, true)).unwrap();
            let a = per.update(&s0, &x0, &u, &Landmarks::points(&lms)).unwrap();
            let c = aff.update(&s0, &x0, &u, &Landmarks::points(&lms)).unwrap();
            assert!(a.visible > 0.0);
            assert!(rel_frobenius(&c.s, &a.s) < 1e-9, "{b:?}: {}", rel_frobenius(&c.s, &a.s));
        }
    }

    fn fd_local<F: Fn(&[f64], &[f64]) -> DMatrix<f64>>(
        sys: &Quadrotor,
        x0: &[f64],
        u: &[f64],
        t: usize,
        h: f64,
        f: F,
    ) -> DMatrix<f64> {
        let eval = |sign: f64| {
            let mut d = vec![0.0; 12];
            let mut uu = u.to_vec();
            if t < 12 {
                d[t] = sign * h;
            } else {
                uu[t - 12] += sign * h;
            }
            f(&sys.perturb_plant(x0, &d), &uu)
        };
        (eval(1.0) - eval(-1.0)) / (2.0 * h)
    }

    #[test]
    fn local_gradients_match_finite_differences() {
        let sys = quad();
        let (x0, u, lms) = scene(3, 5);
        let s0 = DMatrix::identity(21, 21) / 0.3;
        for (b, affine) in [(Bundling::Lie, false), (Bundling::Lie, true), (Bundling::Explicit, true), (Bundling::Explicit, false)] {
            let ctx = IntervalContext::new(&sys, 0.02, 5, opts(b, affine)).unwrap();
            let lm = Landmarks::points(&lms);
            let res = ctx.update_with_gradient(&s0, &x0, &u, &lm).unwrap();
            let g = res.grad.unwrap();
            for t in 0..16 {
                let h = if t < 12 { 1e-5 } else { 1e-4 };
                let fd = fd_local(&sys, &x0, &u, t, h, |x, uu| ctx.update(&s0, x, uu, &lm).unwrap().s);
                let err = (&fd - &g.ds[t]).amax();
                assert!(err <= 1e-4 * (1.0 + fd.amax()), "{b:?} affine {affine} dir {t}: {err} vs {}", fd.amax());
                let fd = fd_local(&sys, &x0, &u, t, h, |x, uu| ctx.update(&s0, x, uu, &lm).unwrap().info_e0);
                let err = (&fd - &g.dinfo_e0[t]).amax();
                assert!(err <= 1e-4 * (1.0 + fd.amax()), "{b:?} info dir {t}: {err}");
            }
        }
    }
}

