use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Hyperparameters `θ = (ρ, σ, α)` of the AR(1) latent chain.
///
/// Samplers and the INLA optimiser work on the unconstrained internal
/// triple `(ρ̃, log σ⁻², α)` with `ρ̃ = log(1+ρ) − log(1−ρ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
}

pub const PARAM_NAMES: [&str; 3] = ["rho", "sigma", "alpha"];

impl HyperParams {
    pub fn new(rho: f64, sigma: f64, alpha: f64) -> Result<Self> {
        let theta = Self { rho, sigma, alpha };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::InvalidHyperParams(format!("|rho| must be < 1, got {}", self.rho)));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidHyperParams(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidHyperParams(format!("alpha must be finite, got {}", self.alpha)));
        }
        Ok(())
    }

    /// `ρ̃ = log(1+ρ) − log(1−ρ)`.
    pub fn rho_tilde(&self) -> f64 {
        (1.0 + self.rho).ln() - (1.0 - self.rho).ln()
    }

    /// `log σ⁻²`.
    pub fn log_precision(&self) -> f64 {
        -2.0 * self.sigma.ln()
    }

    pub fn to_internal(&self) -> [f64; 3] {
        [self.rho_tilde(), self.log_precision(), self.alpha]
    }

    pub fn from_internal(u: [f64; 3]) -> Result<Self> {
        Self::new(internal_to_natural(0, u[0]), internal_to_natural(1, u[1]), u[2])
    }

    pub fn get(&self, axis: usize) -> f64 {
        match axis {
            0 => self.rho,
            1 => self.sigma,
            2 => self.alpha,
            _ => panic!("axis {axis} out of range"),
        }
    }

    /// Stationary variance `σ²/(1−ρ²)`.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (1.0 - self.rho * self.rho)
    }
}

/// Maps one internal coordinate to its natural value.
pub fn internal_to_natural(axis: usize, u: f64) -> f64 {
    match axis {
        0 => (0.5 * u).tanh(),
        1 => (-0.5 * u).exp(),
        2 => u,
        _ => panic!("axis {axis} out of range"),
    }
}

/// `|d natural / d internal|` at internal value `u`.
pub fn natural_jacobian(axis: usize, u: f64) -> f64 {
    match axis {
        0 => {
            let t = (0.5 * u).tanh();
            0.5 * (1.0 - t * t)
        }
        1 => 0.5 * (-0.5 * u).exp(),
        2 => 1.0,
        _ => panic!("axis {axis} out of range"),
    }
}

/// Priors: `ρ̃ ~ N(m_ρ, s_ρ²)`, `α ~ N(m_α, s_α²)`, `σ⁻² ~ Gamma(a, b)`
/// with `b` a rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub m_rho: f64,
    pub s_rho: f64,
    pub m_alpha: f64,
    pub s_alpha: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            m_rho: 0.0,
            s_rho: 0.15,
            m_alpha: 0.0,
            s_alpha: 10.0,
            a: 0.01,
            b: 0.01,
        }
    }
}

impl PriorSpec {
    /// Start point for optimisers: prior centre on the internal scale.
    pub fn center_internal(&self) -> [f64; 3] {
        [self.m_rho, (self.a / self.b).ln(), self.m_alpha]
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<HyperParams> {
        let gamma = rand_distr::Gamma::new(self.a, 1.0 / self.b)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let precision: f64 = rng.sample(gamma);
        HyperParams::from_internal([
            rng.normal(self.m_rho, self.s_rho),
            precision.max(f64::MIN_POSITIVE).ln(),
            rng.normal(self.m_alpha, self.s_alpha),
        ])
    }
}

pub fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (LN_2PI + z * z) - sd.ln()
}

/// Log-density of `ℓ = log τ` when `τ ~ Gamma(a, rate b)`; includes the
/// `+ℓ` Jacobian.
pub fn log_gamma_density_log_scale(ell: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - libm::lgamma(a) + a * ell - b * ell.exp()
}

/// Prior log-density on the internal scale `(ρ̃, log σ⁻², α)`.
pub fn log_prior_internal(u: [f64; 3], prior: &PriorSpec) -> f64 {
    log_normal_pdf(u[0], prior.m_rho, prior.s_rho)
        + log_gamma_density_log_scale(u[1], prior.a, prior.b)
        + log_normal_pdf(u[2], prior.m_alpha, prior.s_alpha)
}

/// Prior log-density of `theta`, expressed on the internal scale.
pub fn log_prior(theta: &HyperParams, prior: &PriorSpec) -> f64 {
    log_prior_internal(theta.to_internal(), prior)
}
