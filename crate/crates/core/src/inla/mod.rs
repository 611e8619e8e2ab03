//! Integrated nested Laplace approximation for AR(1) latent chains.

mod gaussian;
mod marginal;
mod theta;

pub use gaussian::{gaussian_approx, gaussian_approx_with, GaussianChain, NewtonConfig};
pub use marginal::{
    hyper_marginal, hyper_marginal_internal, latent_marginal_gaussian, latent_marginal_laplace, LaplaceConfig,
    Marginal1D,
};
pub use theta::{
    explore_theta, explore_theta_with, grid_chains, laplace_theta, log_theta_posterior, GridConfig, ThetaGrid,
    ThetaPoint,
};
