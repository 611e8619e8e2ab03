//! Inference for chain-structured latent Gaussian state-space models.
//!
//! The crate bundles a compact INLA engine for AR(1) latent chains
//! ([`inla`]), the particle-filter proposal built from its joint Gaussian
//! approximation ([`proposal`]), a generic particle filter ([`smc`]) and a
//! particle marginal Metropolis–Hastings sampler ([`pmmh`]).

pub mod error;
pub mod inla;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod pmmh;
pub mod proposal;
pub mod rng;
pub mod smc;

pub use error::{Error, Result};
