//! One interval update on the quadrotor through both bundling paths.

use nalgebra::{DMatrix, Vector3};
use siif::dynamics::{DynamicsParams, Quadrotor, System};
use siif::geom::PlantState;
use siif::linalg::{rel_frobenius, sym_inverse};
use siif::sensing::OrthoCamera;
use siif::siif::{Bundling, IntervalContext, IntervalOptions, Landmarks};

fn main() -> siif::Result<()> {
    let sys = Quadrotor::new(DynamicsParams::default(), OrthoCamera::forward(0.8, 0.02)?)?;
    let plant = PlantState { v: Vector3::new(1.0, 0.3, 0.0), ..PlantState::hover_at(Vector3::new(0.0, 0.0, 1.0)) };
    let x0 = sys.nav_state(plant).to_embedding();
    let landmarks: Vec<Vector3<f64>> =
        (0..20).map(|i| Vector3::new(4.0 + 0.2 * i as f64, -2.0 + 0.2 * i as f64, 0.5 + 0.1 * (i % 7) as f64)).collect();
    let s0 = DMatrix::identity(21, 21) / 0.3;
    let mut explicit = None;
    for bundling in [Bundling::Explicit, Bundling::Lie] {
        let ctx = IntervalContext::new(&sys, 0.02, 7, IntervalOptions { bundling, ..IntervalOptions::default() })?;
        let res = ctx.update(&s0, &x0, &sys.hover_control(), &Landmarks::points(&landmarks))?;
        let p = sym_inverse(&res.s);
        let reference = explicit.get_or_insert_with(|| res.info_e0.clone());
        println!(
            "{bundling:?}: visible weight {:.2}, tr P {:.4}, tr P_pos {:.4}, info error vs explicit {:.2e}",
            res.visible,
            p.trace(),
            p.view((0, 0), (3, 3)).trace(),
            rel_frobenius(&res.info_e0, reference)
        );
    }
    Ok(())
}
