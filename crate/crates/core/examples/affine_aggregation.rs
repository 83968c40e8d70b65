//! Per-landmark sum against the affine aggregation: same information,
//! landmark-count-independent cost.

use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use siif::dynamics::{DynamicsParams, Quadrotor, System};
use siif::geom::PlantState;
use siif::linalg::rel_frobenius;
use siif::sensing::OrthoCamera;
use siif::siif::{IntervalContext, IntervalOptions, Landmarks};

fn main() -> siif::Result<()> {
    let sys = Quadrotor::new(DynamicsParams::default(), OrthoCamera::forward(0.8, 0.02)?)?;
    let x0 = sys.nav_state(PlantState::hover_at(Vector3::new(0.0, 0.0, 1.0))).to_embedding();
    let u = sys.hover_control();
    let s0 = DMatrix::identity(21, 21) / 0.3;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for n in [10, 100, 1000] {
        let lms: Vec<Vector3<f64>> =
            (0..n).map(|_| Vector3::new(rng.gen_range(2.0..9.0), rng.gen_range(-4.0..4.0), rng.gen_range(-1.0..3.0))).collect();
        let mut out = Vec::new();
        for affine in [false, true] {
            let ctx = IntervalContext::new(&sys, 0.02, 7, IntervalOptions { affine, ..IntervalOptions::default() })?;
            let t = Instant::now();
            let s = ctx.update(&s0, &x0, &u, &Landmarks::points(&lms))?.s;
            out.push((s, t.elapsed().as_secs_f64() * 1e3));
        }
        println!(
            "N = {n:4}: per-landmark {:7.2} ms, affine {:6.2} ms, relative difference {:.1e}",
            out[0].1,
            out[1].1,
            rel_frobenius(&out[1].0, &out[0].0)
        );
    }
    Ok(())
}
