//! Every objective on a gently manoeuvring trajectory, with analytic
//! gradients checked against finite differences. (At exactly zero body rate
//! the orthographic landmark Jacobians lose rank and the marginalized
//! objectives are not differentiable, so the check avoids that point.)

use nalgebra::Vector3;
use siif::dynamics::{DynamicsParams, Quadrotor};
use siif::geom::{PlantState, TimeGrid};
use siif::objectives::{evaluate, gradient, GradientMode, ObjectiveKind, ObjectiveSpec, Problem};
use siif::sensing::OrthoCamera;

fn main() -> siif::Result<()> {
    let sys = Quadrotor::new(DynamicsParams::default(), OrthoCamera::forward(0.8, 0.02)?)?;
    let plant = PlantState { v: Vector3::new(0.5, 0.0, 0.0), ..PlantState::hover_at(Vector3::new(0.0, 0.0, 1.0)) };
    let lms = (0..15).map(|i| vec![4.0 + 0.3 * i as f64, -2.0 + 0.3 * i as f64, 1.0]).collect();
    let p = Problem::new(&sys, TimeGrid::new(0.02, 7, 4)?, sys.nav_state(plant).to_embedding(), lms, Vector3::new(1.0, 0.0, 1.0));
    let controls = siif::harness::timing::timing_controls(&sys, p.grid.intervals);
    for kind in ObjectiveKind::ALL {
        let spec = ObjectiveSpec::new(kind);
        let value = evaluate(&p, &controls, &spec, false)?.value;
        let an = gradient(&p, &controls, &spec, GradientMode::Analytic)?;
        let fd = gradient(&p, &controls, &spec, GradientMode::FiniteDiff)?;
        let err = an.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        println!("{:>15}: value {value:10.4}  |∇| {scale:.3e}  gradient error {:.1e}", kind.label(), err / scale.max(1e-12));
    }
    let hard = evaluate(&p, &controls, &ObjectiveSpec::evaluation(), false)?;
    println!("reporting evaluation {:.4}, traces {:.4?}", hard.value, hard.traces);
    Ok(())
}
