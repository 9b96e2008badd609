#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod error;
pub mod geometry;
pub mod graph;
pub(crate) mod math;
pub mod metrics;
pub mod model;
pub mod prompt;
pub mod scene;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
