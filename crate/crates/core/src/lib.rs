//! Robust static hedging of freight-rate risk under model uncertainty.
//!
//! A prior set of bivariate spot/index models is aggregated into one
//! Gaussian model through the 2-Wasserstein barycenter, and a quadratic
//! static hedge is fitted by Monte Carlo under the aggregate.

pub mod barycenter;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod gauss;
pub mod hedging;
pub mod models;
pub mod rng;

pub use error::{Error, Result};
