//! The smooth field-of-view weight and its derivative in cos θ.

use siif::sensing::{visibility_of_cos, visibility_sq_of_cos};

fn main() {
    let theta_max = 0.8;
    println!("{:>8} {:>10} {:>10} {:>12}", "theta", "sigma", "sigma^2", "d/dcos");
    for i in 0..=20 {
        let theta = 1.0 * i as f64 / 20.0;
        let (s2, d) = visibility_sq_of_cos(theta.cos(), theta_max);
        println!("{theta:8.3} {:10.5} {s2:10.5} {d:12.5}", visibility_of_cos(theta.cos(), theta_max).0);
    }
}
