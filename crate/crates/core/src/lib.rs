pub mod discriminators;
pub mod dsp;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorKind, Result};
