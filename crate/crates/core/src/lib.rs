pub mod analysis;
pub mod config;
pub mod dataio;
pub mod error;
pub mod manifest;
pub mod medium;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod solver;
pub mod train;

pub use error::{Error, ErrorCategory, Result};
