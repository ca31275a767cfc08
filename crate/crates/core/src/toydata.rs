//! Small synthetic datasets for demos and tests.

use crate::dataio::{Column, Record, Schema, Value};
use crate::numcore::Rng;

/// Mode centres of the 2-D, four-mode mixture.
pub const MIXTURE_CENTRES: [[f64; 2]; 4] = [[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]];
pub const MIXTURE_STD: f64 = 0.05;

pub fn mixture_schema() -> Schema {
    Schema::new(vec![Column::continuous("x", 0.0, 1.0), Column::continuous("y", 0.0, 1.0)], None)
        .expect("static schema is valid")
}

/// `n` draws from an equal-weight mixture of isotropic normals inside the unit square.
pub fn gaussian_mixture_2d(n: usize, rng: &mut Rng) -> Vec<Record> {
    (0..n)
        .map(|_| {
            let c = MIXTURE_CENTRES[rng.index(4)];
            c.iter()
                .map(|m| Value::Num((m + MIXTURE_STD * rng.standard_normal()).clamp(0.0, 1.0)))
                .collect()
        })
        .collect()
}
