//! State-space models with an AR(1) latent chain.
//!
//! `X₁ ~ N(0, σ²/(1−ρ²))`, `X_t | X_{t−1} ~ N(ρ X_{t−1}, σ²)`, and an
//! observation density `g_θ(y | x)` supplied by the concrete model.

mod dataset;
mod linear_gaussian;
mod params;
mod poisson;

pub use dataset::{Dataset, DatasetMeta};
pub use linear_gaussian::{kalman_filter, kalman_loglik, KalmanOutput, LinearGaussianSsm};
pub use params::{
    internal_to_natural, log_gamma_density_log_scale, log_normal_pdf, log_prior, log_prior_internal,
    natural_jacobian, HyperParams, PriorSpec, PARAM_NAMES,
};
pub use poisson::{poisson_log_obs, PoissonSsm};

use crate::error::{Error, Result};
use crate::linalg::TridiagSym;
use crate::rng::{streams, RngStream};

/// Densities and samplers of a state-space model.
pub trait StateSpaceModel: Send + Sync {
    fn name(&self) -> &'static str;

    /// `log μ_θ(x₁)`
    fn log_initial(&self, x: f64, theta: &HyperParams) -> f64 {
        ar1_log_initial(x, theta)
    }

    /// `log f_θ(x_t | x_{t−1})`
    fn log_transition(&self, x: f64, x_prev: f64, theta: &HyperParams) -> f64 {
        ar1_log_transition(x, x_prev, theta)
    }

    /// `log g_θ(y_t | x_t)`
    fn log_observation(&self, y: f64, x: f64, theta: &HyperParams) -> f64;

    fn sample_initial(&self, theta: &HyperParams, rng: &mut RngStream) -> f64 {
        rng.normal(0.0, theta.stationary_variance().sqrt())
    }

    fn sample_transition(&self, x_prev: f64, theta: &HyperParams, rng: &mut RngStream) -> f64 {
        rng.normal(theta.rho * x_prev, theta.sigma)
    }

    fn sample_observation(&self, x: f64, theta: &HyperParams, rng: &mut RngStream) -> f64;

    /// Checks that `y` is in the model's observation space.
    fn validate_observations(&self, y: &[f64]) -> Result<()> {
        if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("non-finite observation {v}")));
        }
        Ok(())
    }
}

/// Latent Gaussian structure needed by the INLA engine.
pub trait LatentGaussianModel: StateSpaceModel {
    /// Precision of the latent chain `x_{1:T} | θ`.
    fn prior_precision(&self, len: usize, theta: &HyperParams) -> TridiagSym {
        ar1_prior_precision(len, theta)
    }

    /// `(log g, ∂/∂x log g, ∂²/∂x² log g)` at `(y, x)`.
    fn observation_derivatives(&self, y: f64, x: f64, theta: &HyperParams) -> (f64, f64, f64);
}

pub fn ar1_log_initial(x: f64, theta: &HyperParams) -> f64 {
    log_normal_pdf(x, 0.0, theta.stationary_variance().sqrt())
}

pub fn ar1_log_transition(x: f64, x_prev: f64, theta: &HyperParams) -> f64 {
    log_normal_pdf(x, theta.rho * x_prev, theta.sigma)
}

/// `Q = σ⁻² · tridiag(1, 1+ρ², …, 1+ρ², 1; −ρ)`; for one time point
/// `Q = (1−ρ²)/σ²`.
pub fn ar1_prior_precision(len: usize, theta: &HyperParams) -> TridiagSym {
    assert!(len >= 1, "series length must be positive");
    let tau = 1.0 / (theta.sigma * theta.sigma);
    if len == 1 {
        return TridiagSym::new(vec![(1.0 - theta.rho * theta.rho) * tau], vec![]).unwrap();
    }
    let mut diag = vec![(1.0 + theta.rho * theta.rho) * tau; len];
    diag[0] = tau;
    diag[len - 1] = tau;
    TridiagSym::new(diag, vec![-theta.rho * tau; len - 1]).unwrap()
}

/// Draws `x₁ ~ μ`, then alternately `y_t ~ g(·|x_t)` and
/// `x_{t+1} ~ f(·|x_t)`, from the `SIMULATE` stream of `seed`. The draw
/// order makes a shorter series a prefix of a longer one with the same seed.
pub fn simulate<M: StateSpaceModel + ?Sized>(
    model: &M,
    len: usize,
    theta: &HyperParams,
    seed: u64,
) -> Result<Dataset> {
    if len == 0 {
        return Err(Error::InvalidConfig("series length must be at least 1".into()));
    }
    theta.validate()?;
    let mut rng = RngStream::new(seed, streams::SIMULATE);
    let mut x = Vec::with_capacity(len);
    let mut y = Vec::with_capacity(len);
    for t in 0..len {
        let xt = if t == 0 {
            model.sample_initial(theta, &mut rng)
        } else {
            model.sample_transition(x[t - 1], theta, &mut rng)
        };
        x.push(xt);
        y.push(model.sample_observation(xt, theta, &mut rng));
    }
    Ok(Dataset {
        y,
        x_true: Some(x),
        meta: DatasetMeta {
            model: model.name().to_string(),
            seed,
            theta: Some(*theta),
            obs_sd: None,
        },
    })
}

/// `log μ(x₁) + Σ log f(x_t|x_{t−1}) + Σ log g(y_t|x_t)`.
pub fn log_joint<M: StateSpaceModel + ?Sized>(model: &M, y: &[f64], x: &[f64], theta: &HyperParams) -> f64 {
    let mut total = model.log_initial(x[0], theta);
    for t in 1..x.len() {
        total += model.log_transition(x[t], x[t - 1], theta);
    }
    total + y.iter().zip(x).map(|(&yt, &xt)| model.log_observation(yt, xt, theta)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cholesky, partial_inverse, sample_gaussian};
    use approx::assert_abs_diff_eq;

    #[test]
    fn precision_examples() {
        let q = ar1_prior_precision(3, &HyperParams::new(0.0, 1.0, 0.0).unwrap());
        assert_eq!(q, TridiagSym::identity(3));
        let q = ar1_prior_precision(2, &HyperParams::new(0.7, 0.5, 0.0).unwrap());
        assert_abs_diff_eq!(q.diag()[0], 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(q.diag()[1], 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(q.offdiag()[0], -2.8, epsilon = 1e-14);
        let q = ar1_prior_precision(1, &HyperParams::new(0.6, 0.5, 0.0).unwrap());
        assert_abs_diff_eq!(q.diag()[0], 0.64 * 4.0, epsilon = 1e-14);
    }

    /// Dense `log N(x; 0, Q⁻¹)` against the factorised AR(1) density.
    #[test]
    fn precision_reproduces_factorised_density() {
        let theta = HyperParams::new(0.7, 0.5, 0.3).unwrap();
        let model = PoissonSsm;
        for len in 1..=20 {
            let x: Vec<f64> = (0..len).map(|t| ((t as f64) * 0.37).sin()).collect();
            let q = ar1_prior_precision(len, &theta).to_dense();
            let chol = q.clone().cholesky().unwrap();
            let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let xv = nalgebra::DVector::from_vec(x.clone());
            let quad = (xv.transpose() * &q * &xv)[(0, 0)];
            let dense = -0.5 * len as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * logdet - 0.5 * quad;
            let mut fact = ar1_log_initial(x[0], &theta);
            for t in 1..len {
                fact += ar1_log_transition(x[t], x[t - 1], &theta);
            }
            assert_abs_diff_eq!(dense, fact, epsilon = 1e-10);
            let y = vec![1.0; len];
            let joint = log_joint(&model, &y, &x, &theta);
            let obs: f64 = x.iter().map(|&xt| model.log_observation(1.0, xt, &theta)).sum();
            assert_abs_diff_eq!(joint, dense + obs, epsilon = 1e-10);
        }
    }

    #[test]
    fn transition_independent_of_past_when_rho_zero() {
        let theta = HyperParams::new(0.0, 0.8, 0.0).unwrap();
        assert_eq!(ar1_log_transition(0.4, -3.0, &theta) - ar1_log_transition(0.4, 5.0, &theta), 0.0);
    }

    #[test]
    fn ar1_draws_match_partial_inverse_lag_one() {
        let theta = HyperParams::new(0.7, 0.5, 0.0).unwrap();
        let q = ar1_prior_precision(50, &theta);
        let l = cholesky(&q).unwrap();
        let p = partial_inverse(&l);
        let mut rng = RngStream::new(21, 0);
        let draws = 20_000;
        let zero = vec![0.0; 50];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            let x = sample_gaussian(&l, &zero, &mut rng).unwrap();
            let prod = x[10] * x[11];
            s += prod;
            s2 += prod * prod;
        }
        let mean = s / draws as f64;
        let se = ((s2 / draws as f64 - mean * mean) / draws as f64).sqrt();
        assert!((mean - p.cov1[10]).abs() < 3.0 * se, "{mean} vs {}", p.cov1[10]);
    }

    #[test]
    fn simulate_is_deterministic_and_prefix_consistent() {
        let theta = HyperParams::new(0.7, 0.5, 1.0).unwrap();
        let a = simulate(&PoissonSsm, 50, &theta, 3).unwrap();
        let b = simulate(&PoissonSsm, 50, &theta, 3).unwrap();
        assert_eq!(a, b);
        let c = simulate(&PoissonSsm, 20, &theta, 3).unwrap();
        assert_eq!(&a.y[..20], &c.y[..]);
        assert!(simulate(&PoissonSsm, 0, &theta, 3).is_err());
        assert!(a.y.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn simulate_degenerate_dynamics() {
        let theta = HyperParams::new(0.0, 1e-8, 0.0).unwrap();
        let d = simulate(&PoissonSsm, 2000, &theta, 5).unwrap();
        assert!(d.x_true.as_ref().unwrap().iter().all(|x| x.abs() < 1e-6));
        let mean = d.y.iter().sum::<f64>() / 2000.0;
        assert!((mean - 1.0).abs() < 4.0 * (1.0f64 / 2000.0).sqrt());
    }

    #[test]
    fn simulate_stationary_variance() {
        let theta = HyperParams::new(0.7, 0.5, 0.0).unwrap();
        let d = simulate(&PoissonSsm, 10_000, &theta, 8).unwrap();
        let x = d.x_true.unwrap();
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        let target = 0.25 / (1.0 - 0.49);
        assert_abs_diff_eq!(target, 0.4902, epsilon = 1e-4);
        assert!((v - target).abs() < 0.05 * target, "sample variance {v}");
    }
}
