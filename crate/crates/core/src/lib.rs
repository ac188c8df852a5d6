pub mod artifact;
pub mod attacks;
pub mod boundary;
pub mod cli;
pub mod data;
pub mod error;
pub mod fixed;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod tensor;

pub use error::{Error, Result};
