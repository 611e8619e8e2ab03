//! Laplace approximation of the hyperparameter posterior and the grid of
//! integration points around its mode.

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use super::gaussian::{gaussian_approx, GaussianChain};
use crate::error::{Error, Result};
use crate::model::{log_prior_internal, HyperParams, LatentGaussianModel, PriorSpec};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Unnormalised `log π̃(θ | y)` together with the Gaussian approximation it
/// was computed from.
pub fn laplace_theta<M: LatentGaussianModel + ?Sized>(
    model: &M,
    y: &[f64],
    theta: &HyperParams,
    prior: &PriorSpec,
) -> Result<(f64, GaussianChain)> {
    let chain = gaussian_approx(model, y, theta)?;
    let n = y.len() as f64;
    let q = model.prior_precision(y.len(), theta);
    let qchol = crate::linalg::cholesky(&q)?;
    let m = &chain.mean;
    let log_latent_prior = -0.5 * n * LN_2PI + 0.5 * qchol.logdet() - 0.5 * q.quad_form(m)?;
    let log_lik: f64 = y
        .iter()
        .zip(m)
        .map(|(&yt, &mt)| model.observation_derivatives(yt, mt, theta).0)
        .sum();
    let log_gauss_at_mode = -0.5 * n * LN_2PI + 0.5 * chain.chol.logdet();
    let value = log_prior_internal(theta.to_internal(), prior) + log_latent_prior + log_lik - log_gauss_at_mode;
    Ok((value, chain))
}

/// `log π(θ) + log π(m|θ) + log π(y|m,θ) − log π_G(m|θ,y)` at the mode `m`.
pub fn log_theta_posterior<M: LatentGaussianModel + ?Sized>(
    model: &M,
    y: &[f64],
    theta: &HyperParams,
    prior: &PriorSpec,
) -> Result<f64> {
    laplace_theta(model, y, theta, prior).map(|(v, _)| v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    /// Spacing of the integration grid in standardised coordinates.
    pub dz: f64,
    /// Largest admitted drop of `log π̃(θ|y)` below the mode.
    pub drop: f64,
    /// Central-difference step for the Hessian, internal scale.
    pub fd_step: f64,
    /// Initial simplex edge for the mode search.
    pub simplex_step: f64,
    pub max_evals: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dz: 1.0,
            drop: 2.5,
            fd_step: 1e-3,
            simplex_step: 0.5,
            max_evals: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPoint {
    pub theta: HyperParams,
    /// `(ρ̃, log σ⁻², α)`
    pub internal: [f64; 3],
    /// Standardised coordinates.
    pub z: [f64; 3],
    /// Unnormalised `log π̃(θᵏ | y)`.
    pub log_post: f64,
    /// `Δ_k`
    pub weight: f64,
}

/// Integration points around the posterior mode of `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGrid {
    pub points: Vec<ThetaPoint>,
    pub mode: HyperParams,
    pub mode_internal: [f64; 3],
    pub mode_log_post: f64,
    /// Negative Hessian of `log π̃(θ|y)` at the mode, internal scale.
    pub neg_hessian: [[f64; 3]; 3],
    /// Lower Cholesky factor of `neg_hessian` (identity after a fallback).
    pub hessian_chol: [[f64; 3]; 3],
    /// `internal = mode_internal + scale · z`.
    pub scale: [[f64; 3]; 3],
    /// Set when the Hessian was not positive definite and identity scaling
    /// was used instead.
    pub hessian_fallback: bool,
    pub dz: f64,
    /// Objective evaluations spent in the mode search.
    pub optimiser_evals: usize,
    /// Grid candidates skipped because the objective failed there.
    pub failed_points: usize,
}

impl ThetaGrid {
    /// Degenerate grid holding a single point.
    pub fn single(theta: HyperParams, log_post: f64) -> Self {
        let u = theta.to_internal();
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        Self {
            points: vec![ThetaPoint {
                theta,
                internal: u,
                z: [0.0; 3],
                log_post,
                weight: 1.0,
            }],
            mode: theta,
            mode_internal: u,
            mode_log_post: log_post,
            neg_hessian: eye,
            hessian_chol: eye,
            scale: eye,
            hessian_fallback: false,
            dz: 1.0,
            optimiser_evals: 0,
            failed_points: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `exp(log_postₖ − max) Δₖ`, renormalised to sum to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let max = self.points.iter().map(|p| p.log_post).fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = self.points.iter().map(|p| (p.log_post - max).exp() * p.weight).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }

    /// Posterior expectation of `f(internal θ)` by the grid quadrature.
    pub fn expectation(&self, f: impl Fn(&[f64; 3]) -> f64) -> f64 {
        self.normalized_weights()
            .iter()
            .zip(&self.points)
            .map(|(w, p)| w * f(&p.internal))
            .sum()
    }
}

/// Nelder–Mead maximisation. Returns `(argmax, max, evaluations)`.
pub(crate) fn nelder_mead_max(
    f: &(impl Fn([f64; 3]) -> f64 + ?Sized),
    start: [f64; 3],
    step: f64,
    max_evals: usize,
) -> Result<([f64; 3], f64, usize)> {
    // minimise g = −f; non-finite values count as +∞
    let g = |x: [f64; 3]| {
        let v = -f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    simplex.push((start, g(start)));
    for i in 0..3 {
        let mut p = start;
        p[i] += step;
        simplex.push((p, g(p)));
    }
    let mut evals = 4;
    let combine = |a: &[f64; 3], b: &[f64; 3], t: f64| -> [f64; 3] {
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
    };
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0];
        let diameter = simplex[1..]
            .iter()
            .map(|(p, _)| (0..3).map(|i| (p[i] - best.0[i]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let spread = simplex[3].1 - best.1;
        if best.1.is_finite() && (diameter <= 1e-7 || (spread <= 1e-13 && diameter <= 1e-4)) {
            return Ok((best.0, -best.1, evals));
        }
        if evals >= max_evals {
            if best.1.is_finite() && diameter <= 1e-3 {
                return Ok((best.0, -best.1, evals));
            }
            return Err(Error::OptimFailed(format!(
                "no convergence after {evals} evaluations (simplex diameter {diameter:e})"
            )));
        }
        let mut centroid = [0.0; 3];
        for (p, _) in &simplex[..3] {
            for i in 0..3 {
                centroid[i] += p[i] / 3.0;
            }
        }
        let worst = simplex[3];
        let reflected = combine(&centroid, &worst.0, -1.0);
        let fr = g(reflected);
        evals += 1;
        if fr < simplex[0].1 {
            let expanded = combine(&centroid, &worst.0, -2.0);
            let fe = g(expanded);
            evals += 1;
            simplex[3] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < worst.1 {
                let c = combine(&centroid, &worst.0, -0.5);
                (c, g(c))
            } else {
                let c = combine(&centroid, &worst.0, 0.5);
                (c, g(c))
            };
            evals += 1;
            if fc < worst.1.min(fr) {
                simplex[3] = (contracted, fc);
            } else {
                let b = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let p = combine(&b, &v.0, 0.5);
                    *v = (p, g(p));
                }
                evals += 3;
            }
        }
    }
}

/// Central-difference Hessian of `f` at `x`.
pub(crate) fn fd_hessian(f: &(impl Fn([f64; 3]) -> f64 + ?Sized), x: [f64; 3], h: f64) -> [[f64; 3]; 3] {
    let at = |di: [f64; 3]| f([x[0] + di[0], x[1] + di[1], x[2] + di[2]]);
    let f0 = f(x);
    let mut hess = [[0.0; 3]; 3];
    for i in 0..3 {
        let mut e = [0.0; 3];
        e[i] = h;
        let plus = at(e);
        e[i] = -h;
        let minus = at(e);
        hess[i][i] = (plus - 2.0 * f0 + minus) / (h * h);
        for j in 0..i {
            let mut pp = [0.0; 3];
            pp[i] = h;
            pp[j] = h;
            let mut pm = pp;
            pm[j] = -h;
            let mut mp = pp;
            mp[i] = -h;
            let mm = [-pp[0], -pp[1], -pp[2]];
            let v = (at(pp) - at(pm) - at(mp) + at(mm)) / (4.0 * h * h);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

/// Mode search, Hessian and grid construction for an arbitrary objective on
/// the internal scale.
///
/// The grid lives in `z` with `internal = θ* + V Λ^{-1/2} z`, where `VΛVᵀ`
/// is the negative Hessian at the mode. Each axis is scanned in steps of
/// `dz` until the drop exceeds `drop`; the tensor product of the scanned
/// ranges is then evaluated and points within `drop` of the mode are kept.
pub fn explore_theta_with<F>(objective: F, start: [f64; 3], config: &GridConfig) -> Result<ThetaGrid>
where
    F: Fn([f64; 3]) -> Result<f64> + Sync,
{
    if !(config.dz > 0.0) || !(config.drop > 0.0) {
        return Err(Error::InvalidConfig("grid spacing and drop must be positive".into()));
    }
    let scalar = |u: [f64; 3]| objective(u).unwrap_or(f64::NEG_INFINITY);
    let (mode_u, mode_val, optimiser_evals) = nelder_mead_max(&scalar, start, config.simplex_step, config.max_evals)?;
    let mode = HyperParams::from_internal(mode_u).map_err(|e| Error::OptimFailed(e.to_string()))?;

    let hess = fd_hessian(&scalar, mode_u, config.fd_step);
    let neg = Matrix3::from_fn(|i, j| -hess[i][j]);
    let eig = SymmetricEigen::new(neg);
    let pd = neg.iter().all(|v| v.is_finite()) && eig.eigenvalues.iter().all(|&l| l > 0.0);
    let (scale, chol, fallback) = if pd {
        let s = eig.eigenvectors * Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let c = neg.cholesky().map(|c| c.l()).unwrap_or_else(Matrix3::identity);
        (s, c, false)
    } else {
        (Matrix3::identity(), Matrix3::identity(), true)
    };
    let to_internal = |z: [f64; 3]| -> [f64; 3] {
        let mut u = mode_u;
        for i in 0..3 {
            for j in 0..3 {
                u[i] += scale[(i, j)] * z[j];
            }
        }
        u
    };

    let max_steps = (3.0 * (2.0 * config.drop).sqrt() / config.dz).ceil() as i64 + 1;
    let mut ranges = [(0i64, 0i64); 3];
    for (axis, range) in ranges.iter_mut().enumerate() {
        for dir in [-1i64, 1] {
            let mut k = 0;
            while k < max_steps {
                let mut z = [0.0; 3];
                z[axis] = (dir * (k + 1)) as f64 * config.dz;
                let v = scalar(to_internal(z));
                if !(mode_val - v <= config.drop) {
                    break;
                }
                k += 1;
            }
            if dir < 0 {
                range.0 = -k;
            } else {
                range.1 = k;
            }
        }
    }

    let mut candidates = Vec::new();
    for a in ranges[0].0..=ranges[0].1 {
        for b in ranges[1].0..=ranges[1].1 {
            for c in ranges[2].0..=ranges[2].1 {
                candidates.push([a as f64 * config.dz, b as f64 * config.dz, c as f64 * config.dz]);
            }
        }
    }
    let evaluated: Vec<Option<ThetaPoint>> = candidates
        .par_iter()
        .map(|&z| {
            let u = to_internal(z);
            let theta = HyperParams::from_internal(u).ok()?;
            let log_post = objective(u).ok().filter(|v| v.is_finite())?;
            Some(ThetaPoint {
                theta,
                internal: u,
                z,
                log_post,
                weight: config.dz.powi(3),
            })
        })
        .collect();
    let failed_points = evaluated.iter().filter(|p| p.is_none()).count();
    let points: Vec<ThetaPoint> = evaluated
        .into_iter()
        .flatten()
        .filter(|p| mode_val - p.log_post <= config.drop)
        .collect();
    if points.is_empty() {
        return Err(Error::OptimFailed("no grid point within the drop threshold".into()));
    }

    let to_array = |m: &Matrix3<f64>| -> [[f64; 3]; 3] { std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])) };
    Ok(ThetaGrid {
        points,
        mode,
        mode_internal: mode_u,
        mode_log_post: mode_val,
        neg_hessian: to_array(&neg),
        hessian_chol: to_array(&chol),
        scale: to_array(&scale),
        hessian_fallback: fallback,
        dz: config.dz,
        optimiser_evals,
        failed_points,
    })
}

/// Explores `π̃(θ | y)` for a latent Gaussian model, starting from the prior
/// centre.
pub fn explore_theta<M: LatentGaussianModel + ?Sized>(
    model: &M,
    y: &[f64],
    prior: &PriorSpec,
    config: &GridConfig,
) -> Result<ThetaGrid> {
    let objective = |u: [f64; 3]| {
        let theta = HyperParams::from_internal(u)?;
        log_theta_posterior(model, y, &theta, prior)
    };
    explore_theta_with(objective, prior.center_internal(), config)
}

/// Gaussian approximations at every grid point, in grid order.
pub fn grid_chains<M: LatentGaussianModel + ?Sized>(model: &M, y: &[f64], grid: &ThetaGrid) -> Result<Vec<GaussianChain>> {
    grid.points.par_iter().map(|p| gaussian_approx(model, y, &p.theta)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{kalman_loglik, log_prior, simulate, LinearGaussianSsm, PoissonSsm, StateSpaceModel};
    use approx::assert_abs_diff_eq;

    #[test]
    fn laplace_is_exact_for_gaussian_likelihood() {
        let model = LinearGaussianSsm::new(0.5);
        let prior = PriorSpec::default();
        let truth = HyperParams::new(0.6, 0.7, 0.3).unwrap();
        let ds = simulate(&model, 40, &truth, 12).unwrap();
        for theta in [truth, HyperParams::new(-0.2, 1.3, -0.4).unwrap(), HyperParams::new(0.95, 0.2, 1.0).unwrap()] {
            let lp = log_theta_posterior(&model, &ds.y, &theta, &prior).unwrap();
            let exact = kalman_loglik(&ds.y, &theta, 0.5) + log_prior(&theta, &prior);
            assert_abs_diff_eq!(lp, exact, epsilon = 1e-8);
        }
    }

    /// Adds a constant to every `log g`.
    struct Shifted(f64);

    impl StateSpaceModel for Shifted {
        fn name(&self) -> &'static str {
            "shifted"
        }
        fn log_observation(&self, y: f64, x: f64, theta: &HyperParams) -> f64 {
            PoissonSsm.log_observation(y, x, theta) + self.0
        }
        fn sample_observation(&self, x: f64, theta: &HyperParams, rng: &mut crate::rng::RngStream) -> f64 {
            PoissonSsm.sample_observation(x, theta, rng)
        }
    }

    impl LatentGaussianModel for Shifted {
        fn observation_derivatives(&self, y: f64, x: f64, theta: &HyperParams) -> (f64, f64, f64) {
            let (a, b, c) = PoissonSsm.observation_derivatives(y, x, theta);
            (a + self.0, b, c)
        }
    }

    #[test]
    fn per_observation_constants_pass_through() {
        let theta = HyperParams::new(0.7, 0.5, 1.0).unwrap();
        let prior = PriorSpec::default();
        let ds = simulate(&PoissonSsm, 15, &theta, 3).unwrap();
        let base = log_theta_posterior(&PoissonSsm, &ds.y, &theta, &prior).unwrap();
        let shifted = log_theta_posterior(&Shifted(0.25), &ds.y, &theta, &prior).unwrap();
        assert_abs_diff_eq!(shifted - base, 15.0 * 0.25, epsilon = 1e-10);
    }

    fn quadratic(center: [f64; 3], prec: [[f64; 3]; 3]) -> impl Fn([f64; 3]) -> Result<f64> + Sync {
        move |u: [f64; 3]| {
            let d = [u[0] - center[0], u[1] - center[1], u[2] - center[2]];
            let mut q = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    q += d[i] * prec[i][j] * d[j];
                }
            }
            Ok(7.0 - 0.5 * q)
        }
    }

    #[test]
    fn quadratic_objective_grid() {
        let center = [0.4, 1.2, -0.3];
        let prec = [[4.0, 1.0, 0.5], [1.0, 2.0, -0.3], [0.5, -0.3, 1.5]];
        // drop chosen off the lattice levels |z|²/2 so the truncation is symmetric
        let cfg = GridConfig { drop: 2.25, ..Default::default() };
        let grid = explore_theta_with(quadratic(center, prec), [0.0; 3], &cfg).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(grid.mode_internal[i], center[i], epsilon = 1e-6);
            for j in 0..3 {
                assert_abs_diff_eq!(grid.neg_hessian[i][j], prec[i][j], epsilon = 1e-4);
            }
        }
        assert!(!grid.hessian_fallback);
        // symmetric grid ⇒ linear expectations are exact
        for i in 0..3 {
            assert_abs_diff_eq!(grid.expectation(|u| u[i]), grid.mode_internal[i], epsilon = 1e-6);
        }
        assert!(grid.len() >= 7 && grid.len() <= 200, "S = {}", grid.len());
        let w: f64 = grid.normalized_weights().iter().sum();
        assert_abs_diff_eq!(w, 1.0, epsilon = 1e-12);
        assert!(grid.points.iter().all(|p| p.log_post >= grid.mode_log_post - 2.25 - 1e-12));
    }

    #[test]
    fn scaling_objective_leaves_mode_unchanged() {
        let center = [0.1, 0.5, 0.9];
        let prec = [[3.0, 0.2, 0.0], [0.2, 1.0, 0.1], [0.0, 0.1, 2.0]];
        let cfg = GridConfig { drop: 2.25, ..Default::default() };
        let a = explore_theta_with(quadratic(center, prec), [0.0; 3], &cfg).unwrap();
        let f = quadratic(center, prec);
        let b = explore_theta_with(move |u| f(u).map(|v| v + 123.0), [0.0; 3], &cfg).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(a.mode_internal[i], b.mode_internal[i], epsilon = 1e-6);
        }
        assert_eq!(a.len(), b.len());
        for (wa, wb) in a.normalized_weights().iter().zip(b.normalized_weights()) {
            assert_abs_diff_eq!(*wa, wb, epsilon = 1e-6);
        }
    }

    #[test]
    fn unavailable_hessian_falls_back_to_identity() {
        // maximum sits on the edge of the domain, so the stencil leaves it
        let f = |u: [f64; 3]| {
            if u[2] > 0.3 {
                return Err(Error::InvalidHyperParams("outside".into()));
            }
            Ok(-(u[0] - 0.2).powi(2) - (u[1] + 0.1).powi(2) - (u[2] - 0.5).powi(2))
        };
        let grid = explore_theta_with(f, [0.0; 3], &GridConfig::default()).unwrap();
        assert!(grid.hessian_fallback);
        assert!(!grid.is_empty());
    }

    #[test]
    fn poisson_fig1_dataset_regression() {
        let truth = HyperParams::new(0.7, 0.5, 1.0).unwrap();
        let ds = simulate(&PoissonSsm, 100, &truth, 1).unwrap();
        let grid = explore_theta(&PoissonSsm, &ds.y, &PriorSpec::default(), &GridConfig::default()).unwrap();
        assert!(!grid.hessian_fallback);
        assert!(grid.len() >= 10 && grid.len() <= 500, "S = {}", grid.len());
        assert!((grid.mode.alpha - 1.0).abs() < 0.6, "{:?}", grid.mode);
        assert!(grid.mode.rho > 0.0 && grid.mode.sigma < 1.5, "{:?}", grid.mode);
        let chains = grid_chains(&PoissonSsm, &ds.y, &grid).unwrap();
        assert_eq!(chains.len(), grid.len());
    }
}
