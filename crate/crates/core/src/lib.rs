pub mod error;
pub mod geometry;
pub mod imaging;
pub mod consistency;
pub mod nn;
pub mod i2g;
pub mod metrics;
pub mod data;
pub mod synth;
pub mod cli;

pub use error::{Error, Result};
