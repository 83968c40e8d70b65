//! Oracle and property checks shared by the `validate` subcommand and the
//! acceptance tests. Each check reports its worst metric against a tolerance.

use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bundling::BundlingRow;
use super::config::ScenarioConfig;
use super::pareto::ParetoSummary;
use super::timing::{frontal_cloud, TimingRecord};
use crate::dynamics::{DiscreteLtv, DynamicsParams, LinearSystem, Quadrotor, System};
use crate::error::Result;
use crate::geom::{PlantState, Rotation, TimeGrid};
use crate::linalg::{nullspace_differential, nullspace_projector, rel_frobenius};
use crate::objectives::{gradient, GradientMode, ObjectiveKind, ObjectiveSpec, Problem};
use crate::sensing::{visibility_sq_of_cos, OrthoCamera};
use crate::siif::{
    build_batch_blocks, explicit_info_contribution, Bundling, IntervalContext, IntervalOptions, LandmarkMode,
    Landmarks,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
    pub elapsed_ms: f64,
}

impl CheckOutcome {
    fn new(name: &str, value: f64, tolerance: f64, passed: bool, detail: String, start: Instant) -> Self {
        Self {
            name: name.into(),
            passed,
            value,
            tolerance,
            detail,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }

    fn at_most(name: &str, value: f64, tolerance: f64, detail: String, start: Instant) -> Self {
        Self::new(name, value, tolerance, value <= tolerance, detail, start)
    }

    /// One-line report, `PASS`/`FAIL` first.
    pub fn line(&self) -> String {
        format!(
            "{} {}: value {:.3e} (tolerance {:.3e}) {} [{:.0} ms]",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance,
            self.detail,
            self.elapsed_ms
        )
    }
}

fn quad() -> Result<Quadrotor> {
    Quadrotor::new(DynamicsParams::default(), OrthoCamera::forward(0.8, 0.02)?)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// A moving, slightly tilted start with a cloud that is half in view and
/// half anywhere around.
fn random_scene(rng: &mut ChaCha8Rng, sys: &Quadrotor, n: usize) -> (Vec<f64>, Vec<f64>, Vec<Vector3<f64>>) {
    let yaw = rng.gen_range(-3.0..3.0);
    let plant = PlantState {
        p: Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.8..1.2)),
        v: Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.2..0.2)),
        r: Rotation::exp(&Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), yaw)),
        omega: Vector3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)),
    };
    let mut lms = frontal_cloud(rng, &plant.p, yaw, 0.8, n - n / 2);
    lms.extend((0..n / 2).map(|_| plant.p + Vector3::from_fn(|_, _| rng.gen_range(-8.0..8.0))));
    let hover = sys.hover_control();
    let u = vec![
        hover[0] * rng.gen_range(0.9..1.1),
        rng.gen_range(-0.01..0.01),
        rng.gen_range(-0.01..0.01),
        rng.gen_range(-0.01..0.01),
    ];
    (sys.nav_state(plant).to_embedding(), u, lms)
}

/// The affine aggregation reproduces the per-landmark sum on `S_K`.
pub fn affine_exactness() -> Result<CheckOutcome> {
    let start = Instant::now();
    let sys = quad()?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s0 = DMatrix::identity(21, 21) / 0.3;
    let mut worst: f64 = 0.0;
    for n in [1, 10, 100] {
        let (x0, u, lms) = random_scene(&mut rng, &sys, n);
        for bundling in [Bundling::Explicit, Bundling::Lie] {
            let run = |affine| -> Result<DMatrix<f64>> {
                let options = IntervalOptions { bundling, affine, ..IntervalOptions::default() };
                Ok(IntervalContext::new(&sys, 0.02, 7, options)?.update(&s0, &x0, &u, &Landmarks::points(&lms))?.s)
            };
            worst = worst.max(rel_frobenius(&run(true)?, &run(false)?));
        }
    }
    Ok(CheckOutcome::at_most("affine exactness", worst, 1e-9, "N ∈ {1, 10, 100}, both bundlings".into(), start))
}

/// A single-step interval on a linear system with a landmark-independent
/// sensor is the textbook predict-then-update information filter.
pub fn kalman_equivalence() -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (n, nw, m, dt) = (4, 2, 2, 0.05);
        let a = random_matrix(&mut rng, n, n);
        let g = random_matrix(&mut rng, n, nw);
        let c = random_matrix(&mut rng, m, n);
        let sys = LinearSystem::new(a.clone(), random_matrix(&mut rng, n, 1), g.clone(), c.clone(), DMatrix::zeros(m, 1));
        let half = random_matrix(&mut rng, n, n);
        let s0 = &half * half.transpose() + DMatrix::identity(n, n);
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let options = IntervalOptions { bundling: Bundling::Explicit, affine: false, ..IntervalOptions::default() };
        let lm = [0.0];
        let got = IntervalContext::new(&sys, dt, 1, options)?.update(&s0, &x0, &[0.3], &Landmarks::Points(vec![&lm]))?.s;
        let f = DMatrix::identity(n, n) + &a * dt;
        let q = &g * g.transpose() * dt;
        let p0 = s0.clone().try_inverse().expect("positive definite prior");
        let predicted = &f * p0 * f.transpose() + q;
        let expected = predicted.try_inverse().expect("positive definite prediction") + c.transpose() * &c;
        worst = worst.max(rel_frobenius(&got, &expected));
    }
    Ok(CheckOutcome::at_most("kalman equivalence", worst, 1e-8, "K = 1, 10 random linear systems".into(), start))
}

/// Nullspace-marginalized batch information equals the Schur complement of
/// the dense joint information over `(e₀, W, ℓ̃)` under a flat landmark prior.
pub fn schur_marginalization() -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let (n, nw, m, nl) = (4, 2, 3, 2);
        let k = 1 + i % 4;
        let ltv: Vec<DiscreteLtv> = (0..k)
            .map(|_| DiscreteLtv {
                a: DMatrix::identity(n, n) + random_matrix(&mut rng, n, n) * 0.3,
                g: random_matrix(&mut rng, n, nw),
            })
            .collect();
        let h: Vec<_> = (0..k).map(|_| random_matrix(&mut rng, m, n)).collect();
        let l: Vec<_> = (0..k).map(|_| random_matrix(&mut rng, m, nl)).collect();
        let blocks = build_batch_blocks(&ltv, &h, &l)?;
        let got = explicit_info_contribution(&blocks, LandmarkMode::Marginalize);
        let nx = n + nw * k;
        let mut jac = DMatrix::zeros(m * k, nx + nl);
        let mut ag = DMatrix::zeros(n * k, nx);
        ag.columns_mut(0, n).copy_from(&blocks.a_block);
        ag.columns_mut(n, nw * k).copy_from(&blocks.g_block);
        jac.columns_mut(0, nx).copy_from(&(&blocks.h_block * ag));
        jac.columns_mut(nx, nl).copy_from(&blocks.l_block);
        let joint = jac.tr_mul(&jac);
        let xx = joint.view((0, 0), (nx, nx));
        let xl = joint.view((0, nx), (nx, nl));
        let ll = joint.view((nx, nx), (nl, nl)).into_owned().try_inverse().expect("full-rank landmark block");
        let expected = xx - xl * ll * xl.transpose();
        worst = worst.max(rel_frobenius(&got, &expected));
    }
    Ok(CheckOutcome::at_most("schur marginalization", worst, 1e-8, "20 random instances, K ≤ 4".into(), start))
}

fn max_rel(an: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    an.iter().zip(fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())) / scale
}

/// Analytic control gradients against central differences on random short
/// horizons, and the constraint identities of the nullspace differential.
pub fn gradient_suite(instances: usize) -> Result<Vec<CheckOutcome>> {
    let sys = quad()?;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let grid = TimeGrid::new(0.02, 3, 3)?;
    let mut worst = [0.0f64; 3];
    let start = Instant::now();
    for _ in 0..instances {
        let (x0, _, lms) = random_scene(&mut rng, &sys, 12);
        let goal = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 1.0);
        let p = Problem::new(&sys, grid, x0, lms.iter().map(|l| l.as_slice().to_vec()).collect(), goal);
        let hover = sys.hover_control()[0];
        let controls: Vec<Vec<f64>> = (0..grid.intervals)
            .map(|_| {
                vec![
                    hover * rng.gen_range(0.95..1.05),
                    rng.gen_range(-0.02..0.02),
                    rng.gen_range(-0.02..0.02),
                    rng.gen_range(-0.02..0.02),
                ]
            })
            .collect();
        for (slot, kind) in [ObjectiveKind::Conventional, ObjectiveKind::PcExact, ObjectiveKind::PcLie].into_iter().enumerate() {
            let spec = ObjectiveSpec::new(kind);
            let an = gradient(&p, &controls, &spec, GradientMode::Analytic)?;
            let fd = gradient(&p, &controls, &spec, GradientMode::FiniteDiff)?;
            worst[slot] = worst[slot].max(max_rel(&an, &fd));
        }
    }
    let detail = format!("{instances} random instances");
    let mut out = vec![
        CheckOutcome::at_most("gradient conventional", worst[0], 1e-6, detail.clone(), start),
        CheckOutcome::at_most("gradient pc-exact/pc-lie", worst[1].max(worst[2]), 1e-4, detail, start),
    ];

    let start = Instant::now();
    let mut ident: f64 = 0.0;
    for i in 0..instances {
        let (m, n) = (6 + i % 5, 1 + i % 4);
        let l = random_matrix(&mut rng, m, n);
        let dl = random_matrix(&mut rng, m, n);
        let ns = nullspace_projector(&l);
        let dq = nullspace_differential(&ns, &dl);
        let annihilate = dq.tr_mul(&l) + ns.q.tr_mul(&dl);
        let orthonormal = dq.tr_mul(&ns.q) + ns.q.tr_mul(&dq);
        ident = ident.max(annihilate.amax()).max(orthonormal.amax());
    }
    out.push(CheckOutcome::at_most("nullspace differential identities", ident, 1e-9, format!("{instances} random instances"), start));
    Ok(out)
}

/// Squared visibility: anchor values and a bounded, continuous derivative in
/// `cos θ` across the whole angle range.
pub fn visibility_properties() -> Result<CheckOutcome> {
    let start = Instant::now();
    let tm = 0.8;
    let mut worst: f64 = 0.0;
    worst = worst.max((visibility_sq_of_cos(1.0, tm).0 - 1.0).abs());
    worst = worst.max((visibility_sq_of_cos((tm / 2.0).cos(), tm).0 - 0.5).abs());
    for theta in [tm, tm + 1e-9, 1.0, 2.0, std::f64::consts::PI] {
        worst = worst.max(visibility_sq_of_cos(theta.cos(), tm).0.abs());
    }
    let a = std::f64::consts::PI / tm;
    let bound = 0.5 * a * a;
    let mut ok = worst <= 1e-12;
    let mut max_jump: f64 = 0.0;
    let mut prev: Option<f64> = None;
    let steps = 2000;
    let h = 1e-7;
    for i in 0..=steps {
        let y = -1.0 + 2.0 * i as f64 / steps as f64;
        let (lo, hi) = ((y - h).max(-1.0), (y + h).min(1.0));
        let fd = (visibility_sq_of_cos(hi, tm).0 - visibility_sq_of_cos(lo, tm).0) / (hi - lo);
        ok &= fd.is_finite() && fd.abs() <= bound * (1.0 + 1e-6);
        if let Some(p) = prev {
            max_jump = max_jump.max((fd - p).abs());
        }
        prev = Some(fd);
    }
    // a step of 1e-3 in cos θ moves a continuous derivative by at most ~|f''|·1e-3
    let jump_tol = 0.05 * bound;
    ok &= max_jump <= jump_tol;
    Ok(CheckOutcome::new(
        "visibility properties",
        worst,
        1e-12,
        ok,
        format!("anchors within {worst:.1e}; derivative bound {bound:.3}; largest step change {max_jump:.2e}"),
        start,
    ))
}

/// The Lie path's error shrinks monotonically with the interval length and
/// both paths' covariance traces agree at `K = 7`.
pub fn bundling_criterion(rows: &[BundlingRow], tolerance: f64) -> CheckOutcome {
    let start = Instant::now();
    let mut lie: Vec<&BundlingRow> = rows.iter().filter(|r| r.path == "lie").collect();
    lie.sort_by_key(|r| r.steps);
    let monotone = lie.windows(2).all(|w| w[0].rel_error <= w[1].rel_error * (1.0 + 1e-12));
    let at = |path: &str| rows.iter().find(|r| r.steps == 7 && r.path == path);
    let agreement = match (at("explicit"), at("lie")) {
        (Some(e), Some(l)) => (l.cov_trace - e.cov_trace).abs() / e.cov_trace,
        _ => f64::INFINITY,
    };
    let errors: Vec<String> = lie.iter().map(|r| format!("{}:{:.2e}", r.steps, r.rel_error)).collect();
    CheckOutcome::new(
        "bundling fidelity",
        agreement,
        tolerance,
        monotone && agreement <= tolerance,
        format!("monotone {monotone}; errors by K [{}]", errors.join(" ")),
        start,
    )
}

fn mean_of(records: &[TimingRecord], path: &str, bundling: &str, n: usize) -> Option<f64> {
    records.iter().find(|r| r.sensor_path == path && r.bundling == bundling && r.landmarks == n).map(|r| r.mean_ms)
}

/// Affine evaluation flat in `N` for both bundlings, per-landmark Lie
/// evaluation growing, and Lie faster than explicit at every `N` on both
/// sensor paths.
pub fn timing_criterion(records: &[TimingRecord]) -> CheckOutcome {
    let start = Instant::now();
    let mut counts: Vec<usize> = records.iter().map(|r| r.landmarks).collect();
    counts.sort_unstable();
    counts.dedup();
    let (lo, hi) = (counts.first().copied().unwrap_or(0), counts.last().copied().unwrap_or(0));
    let ratio = |path: &str, b: &str| match (mean_of(records, path, b, hi), mean_of(records, path, b, lo)) {
        (Some(h), Some(l)) => h / l,
        _ => f64::NAN,
    };
    let affine = ratio("affine", "lie").max(ratio("affine", "explicit"));
    let per_landmark = ratio("per-landmark", "lie");
    let lie_faster = counts.iter().all(|&n| {
        ["per-landmark", "affine"].iter().all(|p| match (mean_of(records, p, "lie", n), mean_of(records, p, "explicit", n)) {
            (Some(l), Some(e)) => l < e,
            _ => false,
        })
    });
    CheckOutcome::new(
        "timing scaling",
        affine,
        1.3,
        affine <= 1.3 && per_landmark >= 5.0 && lie_faster,
        format!("affine ratio N={hi}/N={lo} {affine:.2}; per-landmark lie ratio {per_landmark:.2} (≥ 5); lie faster everywhere {lie_faster}"),
        start,
    )
}

/// `pc-lie` beats the visibility and Gramian baselines at every ρ and keeps
/// at least `fraction` of `pc-exact`'s median reduction.
pub fn pareto_criterion(summary: &ParetoSummary, rho: &[f64], fraction: f64) -> CheckOutcome {
    let start = Instant::now();
    let get = |m: &str, r: f64| {
        summary.curves.iter().find(|c| c.method == m && c.rho == r).map_or(f64::NAN, |c| c.median_reduction)
    };
    let mut ok = !rho.is_empty();
    let mut worst_ratio = f64::INFINITY;
    let mut parts = Vec::new();
    for &r in rho {
        let (lie, exact, vis, gram) = (get("pc-lie", r), get("pc-exact", r), get("max-visibility", r), get("max-gramian", r));
        let ratio = lie / exact;
        ok &= lie > vis && lie > gram && ratio >= fraction;
        worst_ratio = worst_ratio.min(ratio);
        parts.push(format!("ρ={r}: pc-lie {lie:.3} pc-exact {exact:.3} max-vis {vis:.3} max-gram {gram:.3}"));
    }
    CheckOutcome::new("pareto ordering", worst_ratio, fraction, ok && worst_ratio.is_finite(), parts.join("; "), start)
}

/// Fast oracle suite run by `validate`; `config` only feeds the bundling
/// sweep.
pub fn run_all(cfg: &ScenarioConfig, gradient_instances: usize) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![affine_exactness()?, kalman_equivalence()?, schur_marginalization()?];
    out.extend(gradient_suite(gradient_instances)?);
    out.push(visibility_properties()?);
    out.push(bundling_criterion(&super::bundling::run_bundling_experiment(cfg)?, 0.2));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracles_pass() {
        for c in [affine_exactness().unwrap(), kalman_equivalence().unwrap(), schur_marginalization().unwrap(), visibility_properties().unwrap()] {
            assert!(c.passed, "{}", c.line());
        }
    }

    #[test]
    fn small_gradient_suite_passes() {
        for c in gradient_suite(2).unwrap() {
            assert!(c.passed, "{}", c.line());
        }
    }

    #[test]
    fn timing_criterion_reads_ratios() {
        let rec = |p: &str, b: &str, n: usize, ms: f64| TimingRecord {
            sensor_path: p.into(),
            bundling: b.into(),
            landmarks: n,
            repetitions: 1,
            mean_ms: ms,
            std_ms: 0.0,
        };
        let mut recs = vec![
            rec("per-landmark", "explicit", 10, 100.0),
            rec("per-landmark", "lie", 10, 10.0),
            rec("affine", "explicit", 10, 50.0),
            rec("affine", "lie", 10, 5.0),
            rec("per-landmark", "explicit", 100, 1000.0),
            rec("per-landmark", "lie", 100, 60.0),
            rec("affine", "explicit", 100, 50.0),
            rec("affine", "lie", 100, 6.0),
        ];
        assert!(timing_criterion(&recs).passed);
        recs[7].mean_ms = 7.0;
        assert!(!timing_criterion(&recs).passed);
    }
}
