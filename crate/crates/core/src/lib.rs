//! Change-point tests for the spiked eigenvalues of sequential sample covariance matrices.

pub mod artifact;
pub mod changepoint;
pub mod error;
pub mod kernel;
pub mod mp;
pub mod quantile;
pub mod rng;
pub mod sim;
pub mod spectrum;

pub use error::{Error, Result};
