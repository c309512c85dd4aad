pub mod cluster;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
