pub mod bench;
pub mod deep_imputers;
pub mod error;
pub mod forest;
pub mod imputers;
pub mod matrix;
pub mod metrics;
pub mod missingness;
pub mod nn;
pub mod resample;
pub mod rng;
pub mod tabular;

pub use error::{Error, Result};
