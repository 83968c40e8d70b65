//! Landmark marginalization by left-nullspace projection, checked against
//! the Schur complement of the joint information.

use nalgebra::DMatrix;
use siif::linalg::{nullspace_differential, nullspace_projector};

fn main() {
    let h = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.5, 1.0, 0.0, 2.0, 1.0, 1.0]);
    let l = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 0.0, 2.0]);
    let ns = nullspace_projector(&l);
    let projected = ns.q.tr_mul(&h);
    let info = projected.tr_mul(&projected);

    let hh = h.tr_mul(&h);
    let hl = h.tr_mul(&l);
    let ll = l.tr_mul(&l)[(0, 0)];
    let schur = &hh - &hl * hl.transpose() / ll;
    println!("nullspace information:\n{info}");
    println!("Schur complement:\n{schur}");
    println!("|QᵀL| = {:.1e}, |QᵀQ − I| = {:.1e}", ns.q.tr_mul(&l).amax(), (ns.q.tr_mul(&ns.q) - DMatrix::identity(3, 3)).amax());

    let dl = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, -1.0, 0.5]);
    let dq = nullspace_differential(&ns, &dl);
    println!("|dQᵀL + QᵀdL| = {:.1e}", (dq.tr_mul(&l) + ns.q.tr_mul(&dl)).amax());
}
