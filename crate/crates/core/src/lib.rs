//! Equilibrium simulation, price-response estimation and pricing for
//! networks with latent agents.

pub mod conic;
pub mod equilibrium;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod network;
pub mod pricing;
pub mod sparsity;
pub mod stats;

pub use error::{Error, Result};
