//! Source-term estimation for instantaneous radiological releases.
//!
//! The crate couples a closed-form puff transport model and a NaI detector
//! response model to three neural inverse models (point regression, binned
//! classification, mean-field variational Bayesian regression) and a DRAM
//! sampler used as the reference posterior.

pub mod analysis;
pub mod bnn;
pub mod datagen;
pub mod dram;
pub mod error;
pub mod io;
pub mod nn;
pub mod rng;
pub mod sensing;
pub mod transport;

pub use error::{Error, Result};
