use super::{log_normal_pdf, HyperParams, LatentGaussianModel, StateSpaceModel};
use crate::rng::RngStream;

/// `y_t = x_t + α + ε_t`, `ε_t ~ N(0, obs_sd²)`, over the AR(1) chain.
///
/// Everything about this model is available in closed form, which makes it
/// the reference case for likelihood estimates and Laplace exactness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGaussianSsm {
    pub obs_sd: f64,
}

impl LinearGaussianSsm {
    pub fn new(obs_sd: f64) -> Self {
        assert!(obs_sd > 0.0, "observation sd must be positive");
        Self { obs_sd }
    }
}

impl StateSpaceModel for LinearGaussianSsm {
    fn name(&self) -> &'static str {
        "linear-gaussian"
    }

    fn log_observation(&self, y: f64, x: f64, theta: &HyperParams) -> f64 {
        log_normal_pdf(y, x + theta.alpha, self.obs_sd)
    }

    fn sample_observation(&self, x: f64, theta: &HyperParams, rng: &mut RngStream) -> f64 {
        rng.normal(x + theta.alpha, self.obs_sd)
    }
}

impl LatentGaussianModel for LinearGaussianSsm {
    fn observation_derivatives(&self, y: f64, x: f64, theta: &HyperParams) -> (f64, f64, f64) {
        let prec = 1.0 / (self.obs_sd * self.obs_sd);
        let r = y - x - theta.alpha;
        (log_normal_pdf(y, x + theta.alpha, self.obs_sd), r * prec, -prec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanOutput {
    pub loglik: f64,
    /// `E[X_t | y_{1:t}]`
    pub filt_mean: Vec<f64>,
    /// `Var[X_t | y_{1:t}]`
    pub filt_var: Vec<f64>,
}

/// Scalar Kalman filter for [`LinearGaussianSsm`].
pub fn kalman_filter(y: &[f64], theta: &HyperParams, obs_sd: f64) -> KalmanOutput {
    let obs_var = obs_sd * obs_sd;
    let sigma2 = theta.sigma * theta.sigma;
    let mut loglik = 0.0;
    let mut filt_mean = Vec::with_capacity(y.len());
    let mut filt_var = Vec::with_capacity(y.len());
    let (mut m, mut p) = (0.0, theta.stationary_variance());
    for (t, &yt) in y.iter().enumerate() {
        if t > 0 {
            m *= theta.rho;
            p = theta.rho * theta.rho * p + sigma2;
        }
        let s = p + obs_var;
        let v = yt - theta.alpha - m;
        loglik += log_normal_pdf(v, 0.0, s.sqrt());
        let gain = p / s;
        m += gain * v;
        p *= 1.0 - gain;
        filt_mean.push(m);
        filt_var.push(p);
    }
    KalmanOutput { loglik, filt_mean, filt_var }
}

/// Exact `log p_θ(y_{1:T})` under [`LinearGaussianSsm`].
pub fn kalman_loglik(y: &[f64], theta: &HyperParams, obs_sd: f64) -> f64 {
    kalman_filter(y, theta, obs_sd).loglik
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn scalar_marginal() {
        let theta = HyperParams::new(0.0, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(kalman_loglik(&[0.8], &theta, 1.0), log_normal_pdf(0.8, 0.0, 2f64.sqrt()), epsilon = 1e-15);
    }

    /// Dense joint Gaussian: y ~ N(α, Σ_x + s² I).
    fn dense_loglik(y: &[f64], theta: &HyperParams, obs_sd: f64) -> f64 {
        let n = y.len();
        let v = theta.stationary_variance();
        let cov = DMatrix::from_fn(n, n, |i, j| {
            v * theta.rho.powi((i as i32 - j as i32).abs()) + if i == j { obs_sd * obs_sd } else { 0.0 }
        });
        let r = DVector::from_iterator(n, y.iter().map(|v| v - theta.alpha));
        let chol = cov.cholesky().unwrap();
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let quad = r.dot(&chol.solve(&r));
        -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
    }

    #[test]
    fn matches_dense_joint() {
        let theta = HyperParams::new(0.6, 0.8, 0.4).unwrap();
        for y in [vec![0.3, -1.2], vec![1.0, 0.2, -0.5, 2.2, 0.0, 0.9]] {
            assert_abs_diff_eq!(kalman_loglik(&y, &theta, 0.7), dense_loglik(&y, &theta, 0.7), epsilon = 1e-12);
        }
    }

    #[test]
    fn derivatives() {
        let m = LinearGaussianSsm::new(0.5);
        let theta = HyperParams::new(0.2, 1.0, 0.3).unwrap();
        let (f, d1, d2) = m.observation_derivatives(1.0, 0.2, &theta);
        assert_abs_diff_eq!(f, m.log_observation(1.0, 0.2, &theta), epsilon = 1e-15);
        assert_abs_diff_eq!(d1, 0.5 * 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d2, -4.0, epsilon = 1e-14);
    }
}
