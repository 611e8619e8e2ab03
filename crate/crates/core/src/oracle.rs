//! Brute-force reference computations for small problems.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inla::{gaussian_approx, Marginal1D, ThetaGrid};
use crate::linalg::partial_inverse;
use crate::model::{internal_to_natural, log_joint, log_prior_internal, HyperParams, LatentGaussianModel, PriorSpec};

/// Largest series length accepted by [`latent_marginals_brute_force`].
pub const BRUTE_FORCE_MAX_LEN: usize = 4;

/// Marginals of `p(x_t | θ, y)` from the joint evaluated on a tensor grid.
///
/// Axis `t` spans `mᵗ ± half_width·sᵗ` with `points` abscissae, where `m`
/// and `s` are the mean and marginal sds of the Gaussian approximation.
pub fn latent_marginals_brute_force<M: LatentGaussianModel + ?Sized>(
    model: &M,
    y: &[f64],
    theta: &HyperParams,
    points: usize,
    half_width: f64,
) -> Result<Vec<Marginal1D>> {
    let len = y.len();
    if len == 0 || len > BRUTE_FORCE_MAX_LEN {
        return Err(Error::DimensionTooLarge { n: len, limit: BRUTE_FORCE_MAX_LEN });
    }
    let chain = gaussian_approx(model, y, theta)?;
    let pinv = partial_inverse(&chain.chol);
    let axes: Vec<Vec<f64>> = (0..len)
        .map(|t| {
            let (m, s) = (chain.mean[t], pinv.sd(t));
            (0..points)
                .map(|i| m - half_width * s + 2.0 * half_width * s * i as f64 / (points - 1) as f64)
                .collect()
        })
        .collect();
    let total = points.pow(len as u32);
    let index = |mut k: usize| -> Vec<usize> {
        let mut idx = vec![0; len];
        for slot in idx.iter_mut().rev() {
            *slot = k % points;
            k /= points;
        }
        idx
    };
    let logs: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|k| {
            let idx = index(k);
            let x: Vec<f64> = idx.iter().enumerate().map(|(t, &i)| axes[t][i]).collect();
            log_joint(model, y, &x, theta)
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sums = vec![vec![0.0; points]; len];
    for (k, l) in logs.iter().enumerate() {
        let w = (l - max).exp();
        for (t, &i) in index(k).iter().enumerate() {
            sums[t][i] += w;
        }
    }
    Ok(axes
        .into_iter()
        .zip(sums)
        .map(|(grid, s)| Marginal1D::from_log_density(grid, s.iter().map(|v| v.ln()).collect()))
        .collect())
}

/// `max_x |f(x) − g(x)|` over the abscissae of `reference`.
pub fn sup_norm_distance(reference: &Marginal1D, other: &Marginal1D) -> f64 {
    reference
        .grid
        .iter()
        .zip(&reference.log_density)
        .map(|(&x, &l)| (l.exp() - other.density_at(x)).abs())
        .fold(0.0, f64::max)
}

/// Exact latent marginals mixed over a set of `θ` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMixture {
    /// `p(x_t | y)` restricted to the nodes, one per time step.
    pub marginals: Vec<Marginal1D>,
    /// `log p(θ_k) + log p(y | θ_k)` per node (grid-sum approximation).
    pub log_node_weights: Vec<f64>,
}

/// Brute-force version of the grid mixture `Σ_k w_k p(x_t | θ_k, y)`.
///
/// At each node the joint of `(x_t, y)` is summed over the other states on
/// the common abscissae `x_grid` by forward and backward passes, which also
/// yields `p(y | θ_k)`. Node weights are `p(θ_k) p(y | θ_k)` on the internal
/// scale, normalised over the nodes.
pub fn latent_marginals_on_nodes<M: LatentGaussianModel + ?Sized>(
    model: &M,
    y: &[f64],
    prior: &PriorSpec,
    nodes: &[HyperParams],
    x_grid: &[f64],
) -> Result<NodeMixture> {
    let len = y.len();
    let n = x_grid.len();
    if len == 0 || len > BRUTE_FORCE_MAX_LEN {
        return Err(Error::DimensionTooLarge { n: len, limit: BRUTE_FORCE_MAX_LEN });
    }
    if nodes.is_empty() || n < 3 {
        return Err(Error::InvalidConfig("need at least one node and three abscissae".into()));
    }
    let log_h = ((x_grid[n - 1] - x_grid[0]) / (n - 1) as f64).ln();
    let slices: Vec<Vec<Vec<f64>>> = nodes
        .par_iter()
        .map(|theta| {
            let lp = log_prior_internal(theta.to_internal(), prior);
            let log_g: Vec<Vec<f64>> =
                y.iter().map(|&yt| x_grid.iter().map(|&x| model.log_observation(yt, x, theta)).collect()).collect();
            // log_f[j·n + i] = log f(x_j | x_i)
            let log_f: Vec<f64> = (0..n * n).map(|k| model.log_transition(x_grid[k / n], x_grid[k % n], theta)).collect();
            // forward[t][j]: log Σ_{x_{<t}} p(x_{≤t}, y_{<t}) at x_t = x_grid[j]
            let mut forward = vec![vec![0.0; n]; len];
            forward[0] = x_grid.iter().map(|&x| model.log_initial(x, theta)).collect();
            let mut buf = vec![0.0; n];
            for t in 1..len {
                for j in 0..n {
                    for i in 0..n {
                        buf[i] = forward[t - 1][i] + log_g[t - 1][i] + log_f[j * n + i] + log_h;
                    }
                    forward[t][j] = lse_slice(&buf);
                }
            }
            let mut backward = vec![vec![0.0; n]; len];
            for t in (0..len - 1).rev() {
                for i in 0..n {
                    for j in 0..n {
                        buf[j] = log_f[j * n + i] + log_g[t + 1][j] + backward[t + 1][j] + log_h;
                    }
                    backward[t][i] = lse_slice(&buf);
                }
            }
            (0..len)
                .map(|t| (0..n).map(|j| lp + forward[t][j] + log_g[t][j] + backward[t][j]).collect())
                .collect()
        })
        .collect();
    let log_node_weights: Vec<f64> = slices.iter().map(|s| lse_slice(&s[0]) + log_h).collect();
    let marginals = (0..len)
        .map(|t| {
            let logs: Vec<f64> = (0..n).map(|j| lse_slice(&slices.iter().map(|s| s[t][j]).collect::<Vec<_>>())).collect();
            Marginal1D::from_log_density(x_grid.to_vec(), logs)
        })
        .collect();
    Ok(NodeMixture { marginals, log_node_weights })
}

fn lse_slice(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    /// Natural-scale posterior means of `(ρ, σ, α)`.
    pub mean: [f64; 3],
    pub sd: [f64; 3],
    /// Largest log-density on the box faces relative to the maximum.
    pub boundary_drop: f64,
}

/// Posterior moments of `θ` by a tensor-product rule in the standardised
/// coordinates of `grid` (`internal = mode + scale·z`, `|z_j| ≤ half_width`).
pub fn posterior_quadrature<F>(log_post: F, grid: &ThetaGrid, points: usize, half_width: f64) -> Result<PosteriorMoments>
where
    F: Fn([f64; 3]) -> Result<f64> + Sync,
{
    if points < 3 {
        return Err(Error::InvalidConfig("quadrature needs at least 3 points per axis".into()));
    }
    let z = |i: usize| -half_width + 2.0 * half_width * i as f64 / (points - 1) as f64;
    let to_internal = |zz: [f64; 3]| -> [f64; 3] {
        let mut u = grid.mode_internal;
        for i in 0..3 {
            for j in 0..3 {
                u[i] += grid.scale[i][j] * zz[j];
            }
        }
        u
    };
    let evaluated: Vec<(f64, [f64; 3], bool)> = (0..points * points * points)
        .into_par_iter()
        .map(|k| {
            let idx = [k / (points * points), (k / points) % points, k % points];
            let u = to_internal([z(idx[0]), z(idx[1]), z(idx[2])]);
            let l = log_post(u).unwrap_or(f64::NEG_INFINITY);
            let face = idx.iter().any(|&i| i == 0 || i == points - 1);
            (l, u, face)
        })
        .collect();
    let max = evaluated.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::OptimFailed("log posterior not finite on the quadrature box".into()));
    }
    let boundary_drop = evaluated.iter().filter(|e| e.2).map(|e| e.0).fold(f64::NEG_INFINITY, f64::max) - max;
    let mut total = 0.0;
    let mut m1 = [0.0; 3];
    let mut m2 = [0.0; 3];
    for (l, u, _) in &evaluated {
        let w = (l - max).exp();
        total += w;
        for axis in 0..3 {
            let v = internal_to_natural(axis, u[axis]);
            m1[axis] += w * v;
            m2[axis] += w * v * v;
        }
    }
    let mean = m1.map(|v| v / total);
    let sd = std::array::from_fn(|a| (m2[a] / total - mean[a] * mean[a]).max(0.0).sqrt());
    Ok(PosteriorMoments { mean, sd, boundary_drop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inla::{explore_theta_with, GridConfig};
    use crate::model::{log_normal_pdf, LinearGaussianSsm};
    use approx::assert_abs_diff_eq;

    #[test]
    fn brute_force_is_exact_for_gaussian_model() {
        let model = LinearGaussianSsm::new(0.8);
        let theta = HyperParams::new(0.6, 0.7, 0.1).unwrap();
        let y = [0.4, -0.3, 1.2];
        let margs = latent_marginals_brute_force(&model, &y, &theta, 121, 7.0).unwrap();
        let chain = gaussian_approx(&model, &y, &theta).unwrap();
        let cov = crate::linalg::dense_oracle(&chain.prec).unwrap().inverse;
        for t in 0..3 {
            let sd = cov[(t, t)].sqrt();
            for (&x, &l) in margs[t].grid.iter().zip(&margs[t].log_density) {
                assert_abs_diff_eq!(l.exp(), log_normal_pdf(x, chain.mean[t], sd).exp(), epsilon = 1e-6);
            }
        }
        assert!(latent_marginals_brute_force(&model, &[0.0; 5], &theta, 5, 5.0).is_err());
    }

    #[test]
    fn node_mixture_matches_kalman_for_gaussian_model() {
        let model = LinearGaussianSsm::new(0.7);
        let prior = PriorSpec::default();
        let y = [0.3, -0.5, 0.9];
        let nodes = [HyperParams::new(0.5, 0.8, 0.0).unwrap(), HyperParams::new(0.2, 0.6, 0.3).unwrap()];
        let x_grid: Vec<f64> = (0..481).map(|i| -6.0 + 12.0 * i as f64 / 480.0).collect();
        let mix = latent_marginals_on_nodes(&model, &y, &prior, &nodes, &x_grid).unwrap();
        let mut lw = Vec::new();
        for (k, theta) in nodes.iter().enumerate() {
            let expected = log_prior_internal(theta.to_internal(), &prior) + crate::model::kalman_loglik(&y, theta, 0.7);
            assert_abs_diff_eq!(mix.log_node_weights[k], expected, epsilon = 1e-6);
            lw.push(expected);
        }
        let norm = lse_slice(&lw);
        for t in 0..3 {
            for (i, &x) in x_grid.iter().enumerate().step_by(20) {
                let exact: f64 = nodes
                    .iter()
                    .zip(&lw)
                    .map(|(theta, l)| {
                        let chain = gaussian_approx(&model, &y, theta).unwrap();
                        let sd = partial_inverse(&chain.chol).sd(t);
                        (l - norm).exp() * log_normal_pdf(x, chain.mean[t], sd).exp()
                    })
                    .sum();
                assert_abs_diff_eq!(mix.marginals[t].log_density[i].exp(), exact, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn quadrature_of_gaussian_objective() {
        let center = [0.4, 1.0, -0.2];
        let f = move |u: [f64; 3]| Ok((0..3).map(|j| log_normal_pdf(u[j], center[j], 0.3)).sum::<f64>());
        let grid = explore_theta_with(f, [0.0; 3], &GridConfig::default()).unwrap();
        let q = posterior_quadrature(f, &grid, 61, 8.0).unwrap();
        assert!(q.boundary_drop < -25.0);
        // α is the identity map
        assert_abs_diff_eq!(q.mean[2], -0.2, epsilon = 1e-8);
        assert_abs_diff_eq!(q.sd[2], 0.3, epsilon = 1e-6);
        // σ = e^{−u/2} with u ~ N(1, 0.09): lognormal mean
        assert_abs_diff_eq!(q.mean[1], (-0.5 + 0.5 * 0.25 * 0.09f64).exp(), epsilon = 1e-8);
    }
}
