//! Probabilistic pinning control for stochastic coupled map lattices.

pub mod config;
pub mod controllability;
pub mod error;
pub mod fpd;
pub mod lattice;
pub mod linalg;
pub mod linearize;
pub mod plant;
pub mod report;
pub mod sim;
pub mod sysid;

pub use error::{Error, Result};
