//! Portfolio optimisation over a Wasserstein ball around a benchmark
//! strategy, with distortion risk measures, a budget constraint and a
//! copula linking the optimal wealth to the benchmark.

pub mod config;
pub mod copula;
pub mod error;
pub mod estimate;
pub mod experiment;
pub mod io;
pub mod market;
pub mod optimize;
pub mod oracle;
pub mod quantile;
pub mod risk;
pub mod stats;

pub use copula::Copula;
pub use error::{Error, Result};
pub use quantile::{Partition, QuantileGrid};
pub use risk::{DistortionWeight, risk_measure};
