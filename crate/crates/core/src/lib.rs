//! Differentially private tabular data synthesis via characteristic-function
//! embeddings, an adversarially re-weighted frequency critic and an implicit
//! neural generator.

pub mod auxinfo;
pub mod cfembed;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod evalsuite;
pub mod freqdist;
pub mod gennet;
pub mod numcore;
pub mod privacy;
pub mod toydata;
pub mod trainloop;

pub use error::{Error, Result};
