//! Dense matrices, seeded random streams and the Adam update shared by the
//! generator (descent) and critic (ascent) loops.

mod adam;
mod matrix;
mod rng;

pub use adam::AdamState;
pub use matrix::Matrix;
pub use rng::{gaussian_sample, Rng};
