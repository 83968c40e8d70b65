//! Integrates the nominal quadrotor under a climb-and-yaw control sequence.

use nalgebra::Vector3;
use siif::dynamics::{integrate_nominal, DynamicsParams};
use siif::geom::{ControlInput, PlantState, TimeGrid};

fn main() -> siif::Result<()> {
    let params = DynamicsParams::default();
    let grid = TimeGrid::new(0.02, 7, 11)?;
    let hover = -params.gravity.z;
    let controls: Vec<ControlInput> = (0..grid.intervals)
        .map(|i| ControlInput::new(hover * if i < 4 { 1.05 } else { 1.0 }, Vector3::new(0.0, 0.0, 0.002)))
        .collect();
    let states = integrate_nominal(&PlantState::hover_at(Vector3::new(0.0, 0.0, 1.0)), &controls, &grid, &params)?;
    for (k, s) in states.iter().enumerate().step_by(grid.steps_per_interval) {
        println!("t = {:.2} s  p = {:.4?}  v = {:.4?}", k as f64 * grid.dt, s.p.as_slice(), s.v.as_slice());
    }
    Ok(())
}
