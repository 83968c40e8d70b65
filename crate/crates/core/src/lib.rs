//! Interval information filtering for observability-aware trajectory
//! refinement of a camera-equipped quadrotor.

pub mod autodiff;
pub mod dynamics;
pub mod error;
pub mod geom;
pub mod harness;
pub mod linalg;
pub mod objectives;
pub mod refine;
pub mod sensing;
pub mod siif;

pub use error::{Error, Result};
