//! Simulation and frequency-domain inference for stationary multivariate
//! Hawkes processes, including heavy-tailed Mittag-Leffler excitation kernels.

pub mod error;
pub mod harness;
pub mod indeptest;
pub mod mlspecial;
pub mod model;
pub mod optim;
pub mod quadrature;
pub mod simulate;
pub mod spectral;
pub mod stats;
pub mod whittle;

pub use error::{Error, Result};
