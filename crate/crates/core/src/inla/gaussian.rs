use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve, CholBidiag, TridiagSym};
use crate::model::{HyperParams, LatentGaussianModel};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 100,
            max_halvings: 30,
        }
    }
}

/// Gaussian approximation `π_G(x | θ, y) = N(mean, prec⁻¹)` matched to the
/// mode and curvature of the latent conditional.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianChain {
    pub mean: Vec<f64>,
    pub prec: TridiagSym,
    pub chol: CholBidiag,
    pub iterations: usize,
}

impl GaussianChain {
    /// Wraps a mean and precision, factorising the precision.
    pub fn new(mean: Vec<f64>, prec: TridiagSym) -> Result<Self> {
        if mean.len() != prec.n() {
            return Err(Error::DimensionMismatch {
                expected: prec.n(),
                got: mean.len(),
            });
        }
        let chol = cholesky(&prec)?;
        Ok(Self {
            mean,
            prec,
            chol,
            iterations: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `log π_G(x)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let quad = self.prec.quad_form(&r)?;
        Ok(-0.5 * self.len() as f64 * LN_2PI + 0.5 * self.chol.logdet() - 0.5 * quad)
    }
}

/// Result of maximising `−½ xᵀQx + bᵀx + Σ ℓ_t(x_t)`.
#[derive(Debug, Clone)]
pub(crate) struct NewtonMode {
    pub x: Vec<f64>,
    /// `Q + diag(−ℓ″)` at the mode.
    pub hess: TridiagSym,
    pub chol: CholBidiag,
    /// Objective value at the mode.
    pub value: f64,
    pub iterations: usize,
    /// Objective after each accepted step, starting from the initial point.
    #[cfg_attr(not(test), allow(dead_code))]
    pub trace: Vec<f64>,
}

/// Damped Newton ascent on a tridiagonal-prior objective. `terms(t, x_t)`
/// returns `(ℓ_t, ℓ_t′, ℓ_t″)`. Steps are halved until the objective does
/// not decrease.
pub(crate) fn newton_maximise(
    q: &TridiagSym,
    linear: Option<&[f64]>,
    terms: impl Fn(usize, f64) -> (f64, f64, f64),
    start: Vec<f64>,
    cfg: &NewtonConfig,
) -> Result<NewtonMode> {
    let n = q.n();
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let qx = q.mul_vec(x)?;
        let mut value = 0.0;
        let mut grad = vec![0.0; n];
        let mut curv = vec![0.0; n];
        for t in 0..n {
            let (l0, l1, l2) = terms(t, x[t]);
            let b = linear.map_or(0.0, |b| b[t]);
            value += -0.5 * qx[t] * x[t] + b * x[t] + l0;
            grad[t] = -qx[t] + b + l1;
            curv[t] = -l2;
        }
        Ok((value, grad, curv))
    };

    let mut x = start;
    let (mut value, mut grad, mut curv) = objective(&x)?;
    let mut trace = vec![value];
    for iter in 0..=cfg.max_iter {
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if !gnorm.is_finite() || !value.is_finite() {
            return Err(Error::NoConvergence { iterations: iter, gradient: gnorm });
        }
        let hess = q.add_diag(&curv)?;
        let chol = cholesky(&hess)?;
        if gnorm <= cfg.grad_tol {
            return Ok(NewtonMode {
                x,
                hess,
                chol,
                value,
                iterations: iter,
                trace,
            });
        }
        if iter == cfg.max_iter {
            return Err(Error::NoConvergence { iterations: iter, gradient: gnorm });
        }
        let step = solve(&chol, &grad)?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + scale * s).collect();
            let eval = objective(&trial)?;
            if eval.0.is_finite() && eval.0 >= value - 1e-12 * (1.0 + value.abs()) {
                accepted = Some((trial, eval));
                break;
            }
            scale *= 0.5;
        }
        let Some((trial, eval)) = accepted else {
            return Err(Error::NoConvergence { iterations: iter, gradient: gnorm });
        };
        x = trial;
        (value, grad, curv) = eval;
        trace.push(value);
    }
    unreachable!()
}

/// Newton iteration from `x = 0` on
/// `x ↦ −½ xᵀQ(θ)x + Σ log g(y_t | x_t, θ)`.
pub fn gaussian_approx<M: LatentGaussianModel + ?Sized>(
    model: &M,
    y: &[f64],
    theta: &HyperParams,
) -> Result<GaussianChain> {
    gaussian_approx_with(model, y, theta, &NewtonConfig::default())
}

pub fn gaussian_approx_with<M: LatentGaussianModel + ?Sized>(
    model: &M,
    y: &[f64],
    theta: &HyperParams,
    cfg: &NewtonConfig,
) -> Result<GaussianChain> {
    let q = model.prior_precision(y.len(), theta);
    let mode = newton_maximise(
        &q,
        None,
        |t, x| model.observation_derivatives(y[t], x, theta),
        vec![0.0; y.len()],
        cfg,
    )?;
    Ok(GaussianChain {
        mean: mode.x,
        prec: mode.hess,
        chol: mode.chol,
        iterations: mode.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, LinearGaussianSsm, PoissonSsm};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn gaussian_likelihood_is_exact_in_one_step() {
        let model = LinearGaussianSsm::new(0.6);
        let theta = HyperParams::new(0.8, 0.4, 0.5).unwrap();
        let ds = simulate(&model, 30, &theta, 2).unwrap();
        let chain = gaussian_approx(&model, &ds.y, &theta).unwrap();
        assert_eq!(chain.iterations, 1);

        let q = model.prior_precision(30, &theta).to_dense();
        let post = &q + DMatrix::identity(30, 30) / 0.36;
        let rhs = DVector::from_iterator(30, ds.y.iter().map(|v| (v - 0.5) / 0.36));
        let mean = post.clone().lu().solve(&rhs).unwrap();
        for t in 0..30 {
            assert_abs_diff_eq!(chain.mean[t], mean[t], epsilon = 1e-10);
        }
        let dense = chain.prec.to_dense();
        assert!((dense - post).amax() < 1e-10);
    }

    /// T = 1, y = 0, ρ = 0, σ = 1, α = 0: the mode solves `−x − eˣ = 0`,
    /// i.e. `x = −W(1)`.
    #[test]
    fn scalar_poisson_mode() {
        let theta = HyperParams::new(0.0, 1.0, 0.0).unwrap();
        let chain = gaussian_approx(&PoissonSsm, &[0.0], &theta).unwrap();
        // bisection oracle on −x − eˣ
        let (mut lo, mut hi) = (-2.0f64, 0.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if -mid - mid.exp() > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_abs_diff_eq!(chain.mean[0], lo, epsilon = 1e-9);
        assert_abs_diff_eq!(chain.mean[0], -0.567_143_290_409_783_8, epsilon = 1e-9);
        assert_abs_diff_eq!(chain.prec.diag()[0], 1.0 + lo.exp(), epsilon = 1e-9);
    }

    /// Plain dense Newton without line search, as an independent optimiser.
    #[test]
    fn poisson_mode_matches_dense_newton() {
        let theta = HyperParams::new(0.7, 0.5, 1.0).unwrap();
        let ds = simulate(&PoissonSsm, 20, &theta, 9).unwrap();
        let chain = gaussian_approx(&PoissonSsm, &ds.y, &theta).unwrap();

        let q = PoissonSsm.prior_precision(20, &theta).to_dense();
        let mut x = DVector::from_element(20, 0.0);
        for _ in 0..100 {
            let rate = x.map(|v| (v + 1.0f64).exp());
            let grad = -&q * &x + DVector::from_iterator(20, ds.y.iter().zip(rate.iter()).map(|(y, r)| y - r));
            let hess = &q + DMatrix::from_diagonal(&rate);
            x += hess.lu().solve(&grad).unwrap();
        }
        for t in 0..20 {
            assert_abs_diff_eq!(chain.mean[t], x[t], epsilon = 1e-8);
        }
        // mode property: gradient vanishes
        let rate: Vec<f64> = chain.mean.iter().map(|m| (m + 1.0).exp()).collect();
        let qm = PoissonSsm.prior_precision(20, &theta).mul_vec(&chain.mean).unwrap();
        for t in 0..20 {
            assert!((-qm[t] + ds.y[t] - rate[t]).abs() <= 1e-8);
        }
        for t in 0..20 {
            assert_abs_diff_eq!(chain.prec.diag()[t], q[(t, t)] + rate[t], epsilon = 1e-9);
        }
    }

    #[test]
    fn newton_ascent_is_monotone() {
        let theta = HyperParams::new(0.9, 0.3, 2.0).unwrap();
        let ds = simulate(&PoissonSsm, 40, &theta, 1).unwrap();
        let q = PoissonSsm.prior_precision(40, &theta);
        let mode = newton_maximise(
            &q,
            None,
            |t, x| PoissonSsm.observation_derivatives(ds.y[t], x, &theta),
            vec![0.0; 40],
            &NewtonConfig::default(),
        )
        .unwrap();
        assert!(mode.trace.len() >= 3);
        for w in mode.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
        assert_eq!(*mode.trace.last().unwrap(), mode.value);
    }

    #[test]
    fn iteration_cap_reports_no_convergence() {
        let theta = HyperParams::new(0.5, 1.0, 3.0).unwrap();
        let y = vec![200.0; 10];
        let cfg = NewtonConfig { max_iter: 1, ..Default::default() };
        assert!(matches!(
            gaussian_approx_with(&PoissonSsm, &y, &theta, &cfg),
            Err(Error::NoConvergence { .. })
        ));
    }
}
