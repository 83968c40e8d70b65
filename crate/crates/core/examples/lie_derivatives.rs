//! Lie derivatives of one landmark observation along the nominal flow, and
//! the Taylor prediction they give against the integrated trajectory.

use nalgebra::Vector3;
use siif::dynamics::{lie_jet, rk4_step, DynamicsParams, Quadrotor, System};
use siif::geom::PlantState;
use siif::sensing::OrthoCamera;

fn main() -> siif::Result<()> {
    let sys = Quadrotor::new(DynamicsParams::default(), OrthoCamera::forward(0.8, 0.02)?)?;
    let plant = PlantState {
        v: Vector3::new(1.0, 0.3, 0.0),
        omega: Vector3::new(0.0, 0.0, 0.2),
        ..PlantState::hover_at(Vector3::new(0.0, 0.0, 1.0))
    };
    let s0 = sys.nav_state(plant).to_embedding();
    let u = sys.hover_control();
    let landmark = [5.0, 1.0, 1.5];
    let jet = lie_jet(&sys, &s0, &u, &landmark, 4)?;
    for (j, v) in jet.values.iter().enumerate() {
        println!("L^{j} h = {:.6?}", v.as_slice());
    }
    let dt = 0.02;
    let mut s = s0.clone();
    for k in 1..=10 {
        s = rk4_step(&sys, &s, &u, dt);
        let t = k as f64 * dt;
        let mut fact = 1.0;
        let mut pred = jet.values[0].clone();
        for (j, v) in jet.values.iter().enumerate().skip(1) {
            fact *= j as f64;
            pred += v * t.powi(j as i32) / fact;
        }
        let actual = sys.observe(&s, &landmark);
        println!("t = {t:.2} s  Taylor error {:.2e}", (pred[0] - actual[0]).hypot(pred[1] - actual[1]));
    }
    Ok(())
}
