pub mod config;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod model;
pub mod patching;
pub mod posenc;
pub mod real;
pub mod rng;
pub mod samples;
pub mod tensor;
pub mod training;
pub mod verify;
pub mod weights;

pub use error::{Error, Result};
pub use real::{DType, Real};
pub use tensor::Tensor;
