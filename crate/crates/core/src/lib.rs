pub mod adversaries;
pub mod data;
pub mod error;
pub mod extractor;
pub mod generator;
pub mod harness;
pub mod nn;
pub mod substrate;
pub mod training;

pub use error::{Error, ErrorCategory, Result};
