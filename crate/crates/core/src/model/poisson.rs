use rand_distr::Poisson;

use super::{HyperParams, LatentGaussianModel, StateSpaceModel};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// `Y_t | X_t = x ~ Poisson(exp(x + α))` over the AR(1) chain.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PoissonSsm;

/// `y (x+α) − exp(x+α) − log y!`
pub fn poisson_log_obs(y: i64, x: f64, alpha: f64) -> Result<f64> {
    if y < 0 {
        return Err(Error::NegativeCount(y));
    }
    Ok(log_obs(y as f64, x + alpha))
}

fn log_obs(y: f64, eta: f64) -> f64 {
    y * eta - eta.exp() - libm::lgamma(y + 1.0)
}

impl StateSpaceModel for PoissonSsm {
    fn name(&self) -> &'static str {
        "poisson"
    }

    fn log_observation(&self, y: f64, x: f64, theta: &HyperParams) -> f64 {
        log_obs(y, x + theta.alpha)
    }

    fn sample_observation(&self, x: f64, theta: &HyperParams, rng: &mut RngStream) -> f64 {
        let rate = (x + theta.alpha).exp();
        match Poisson::new(rate) {
            Ok(dist) => rng.sample(dist),
            Err(_) => 0.0,
        }
    }

    fn validate_observations(&self, y: &[f64]) -> Result<()> {
        for &v in y {
            if !v.is_finite() || v.fract() != 0.0 {
                return Err(Error::InvalidDataset(format!("Poisson counts must be integers, got {v}")));
            }
            if v < 0.0 {
                return Err(Error::NegativeCount(v as i64));
            }
        }
        Ok(())
    }
}

impl LatentGaussianModel for PoissonSsm {
    fn observation_derivatives(&self, y: f64, x: f64, theta: &HyperParams) -> (f64, f64, f64) {
        let eta = x + theta.alpha;
        let rate = eta.exp();
        (y * eta - rate - libm::lgamma(y + 1.0), y - rate, -rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trivial_values() {
        assert_eq!(poisson_log_obs(0, 0.0, 0.0).unwrap(), -1.0);
        assert_eq!(poisson_log_obs(1, 0.0, 0.0).unwrap(), -1.0);
        assert_eq!(poisson_log_obs(-1, 0.0, 0.0), Err(Error::NegativeCount(-1)));
    }

    #[test]
    fn matches_direct_pmf() {
        // rate e^{1.5}, y = 3: log(λ³ e^{−λ} / 3!)
        let lambda = 1.5f64.exp();
        let direct = (lambda.powi(3) * (-lambda).exp() / 6.0).ln();
        assert_abs_diff_eq!(poisson_log_obs(3, 0.5, 1.0).unwrap(), direct, epsilon = 1e-12);
    }

    #[test]
    fn pmf_sums_to_one() {
        let theta = HyperParams::new(0.0, 1.0, 0.4).unwrap();
        let total: f64 = (0..200).map(|y| PoissonSsm.log_observation(y as f64, 0.9, &theta).exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let theta = HyperParams::new(0.3, 1.0, 0.7).unwrap();
        let h = 1e-5;
        for &(y, x) in &[(0.0, -0.4), (4.0, 0.3), (11.0, 1.2)] {
            let (f, d1, d2) = PoissonSsm.observation_derivatives(y, x, &theta);
            let fp = PoissonSsm.log_observation(y, x + h, &theta);
            let fm = PoissonSsm.log_observation(y, x - h, &theta);
            assert_abs_diff_eq!(f, PoissonSsm.log_observation(y, x, &theta), epsilon = 1e-14);
            assert_abs_diff_eq!(d1, (fp - fm) / (2.0 * h), epsilon = 1e-7);
            assert_abs_diff_eq!(d2, (fp - 2.0 * f + fm) / (h * h), epsilon = 1e-4);
        }
    }

    #[test]
    fn validation() {
        assert!(PoissonSsm.validate_observations(&[0.0, 3.0]).is_ok());
        assert!(PoissonSsm.validate_observations(&[1.5]).is_err());
        assert!(matches!(PoissonSsm.validate_observations(&[-2.0]), Err(Error::NegativeCount(-2))));
    }
}
