//! Posterior marginals of hyperparameters and latent states.

use std::path::Path;

use rayon::prelude::*;

use super::gaussian::{newton_maximise, GaussianChain, NewtonConfig};
use super::theta::ThetaGrid;
use crate::error::{Error, Result};
use crate::linalg::partial_inverse;
use crate::model::{internal_to_natural, log_normal_pdf, natural_jacobian, LatentGaussianModel};

/// Density tabulated on a grid, normalised by the trapezoid rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal1D {
    pub grid: Vec<f64>,
    pub log_density: Vec<f64>,
    /// Log of the trapezoid integral removed during normalisation.
    pub normalization: f64,
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

impl Marginal1D {
    /// Normalises `exp(log_density)` over the increasing abscissae `grid`.
    pub fn from_log_density(grid: Vec<f64>, mut log_density: Vec<f64>) -> Self {
        assert_eq!(grid.len(), log_density.len());
        assert!(grid.len() >= 2, "need at least two abscissae");
        let max = log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = log_density.iter().map(|l| (l - max).exp()).collect();
        let normalization = max + trapezoid(&grid, &dens).ln();
        for l in &mut log_density {
            *l -= normalization;
        }
        Self {
            grid,
            log_density,
            normalization,
        }
    }

    pub fn densities(&self) -> Vec<f64> {
        self.log_density.iter().map(|l| l.exp()).collect()
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.densities())
    }

    /// Linear interpolation of the density; zero outside the grid.
    pub fn density_at(&self, x: f64) -> f64 {
        let g = &self.grid;
        if !(x >= g[0] && x <= g[g.len() - 1]) {
            return 0.0;
        }
        let i = g.partition_point(|v| *v <= x).clamp(1, g.len() - 1);
        let (x0, x1) = (g[i - 1], g[i]);
        let (d0, d1) = (self.log_density[i - 1].exp(), self.log_density[i].exp());
        if x1 == x0 {
            return d0.max(d1);
        }
        d0 + (d1 - d0) * (x - x0) / (x1 - x0)
    }

    /// Abscissa of the largest tabulated density.
    pub fn mode(&self) -> f64 {
        let (i, _) = self
            .log_density
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
        self.grid[i]
    }

    pub fn mean(&self) -> f64 {
        let xf: Vec<f64> = self.grid.iter().zip(self.densities()).map(|(x, d)| x * d).collect();
        trapezoid(&self.grid, &xf)
    }

    pub fn sd(&self) -> f64 {
        let m = self.mean();
        let v: Vec<f64> = self.grid.iter().zip(self.densities()).map(|(x, d)| (x - m).powi(2) * d).collect();
        trapezoid(&self.grid, &v).sqrt()
    }

    /// `value,density` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["value", "density"])?;
        for (x, l) in self.grid.iter().zip(&self.log_density) {
            w.write_record(&[x.to_string(), l.exp().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Abscissae for hyperparameter marginals.
const HYPER_ABSCISSAE: usize = 401;
/// Abscissae for latent marginals.
const LATENT_ABSCISSAE: usize = 401;
/// Half-width of the latent abscissa range, in posterior sds.
const LATENT_HALF_WIDTH: f64 = 8.0;

/// Marginal of internal coordinate `axis` from the grid.
///
/// The weighted grid projections are smoothed with a Gaussian kernel whose
/// width is one projected grid step (capped at half the projected variance),
/// after shrinking the projections towards their mean so that the
/// mixture keeps the grid's mean and variance.
pub fn hyper_marginal_internal(grid: &ThetaGrid, axis: usize) -> Result<Marginal1D> {
    assert!(axis < 3, "axis out of range");
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty theta grid".into()));
    }
    let w = grid.normalized_weights();
    let u: Vec<f64> = grid.points.iter().map(|p| p.internal[axis]).collect();
    let mean: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum();
    let var: f64 = w.iter().zip(&u).map(|(a, b)| a * (b - mean).powi(2)).sum();
    let row = grid.scale[axis];
    let step = grid.dz * (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
    let mut kernel_var = (step * step).min(0.5 * var);
    let shrink;
    if kernel_var <= 1e-12 * step * step {
        kernel_var = (1e-6 * step).powi(2);
        shrink = 1.0;
    } else {
        shrink = (1.0 - kernel_var / var).max(0.0).sqrt();
    }
    let centers: Vec<f64> = u.iter().map(|v| mean + shrink * (v - mean)).collect();
    let sd = kernel_var.sqrt();
    let lo = centers.iter().copied().fold(f64::INFINITY, f64::min) - 6.0 * sd;
    let hi = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 6.0 * sd;
    let abscissae = linspace(lo, hi, HYPER_ABSCISSAE);
    let log_w: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let log_density = abscissae
        .iter()
        .map(|&x| log_sum_exp(log_w.iter().zip(&centers).map(move |(lw, c)| lw + log_normal_pdf(x, *c, sd))))
        .collect();
    Ok(Marginal1D::from_log_density(abscissae, log_density))
}

/// Marginal of `θ_axis` on the natural scale (ρ, σ, α), with the
/// change-of-variables Jacobian applied.
pub fn hyper_marginal(grid: &ThetaGrid, axis: usize) -> Result<Marginal1D> {
    let internal = hyper_marginal_internal(grid, axis)?;
    let mut pairs: Vec<(f64, f64)> = internal
        .grid
        .iter()
        .zip(&internal.log_density)
        .map(|(&u, &l)| (internal_to_natural(axis, u), l - natural_jacobian(axis, u).ln()))
        .filter(|(v, l)| v.is_finite() && l.is_finite())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.dedup_by(|a, b| a.0 == b.0);
    let (values, logs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(Marginal1D::from_log_density(values, logs))
}

fn latent_abscissae(chains: &[GaussianChain], sds: &[f64], i: usize) -> Vec<f64> {
    let lo = chains
        .iter()
        .zip(sds)
        .map(|(c, s)| c.mean[i] - LATENT_HALF_WIDTH * s)
        .fold(f64::INFINITY, f64::min);
    let hi = chains
        .iter()
        .zip(sds)
        .map(|(c, s)| c.mean[i] + LATENT_HALF_WIDTH * s)
        .fold(f64::NEG_INFINITY, f64::max);
    linspace(lo, hi, LATENT_ABSCISSAE)
}

fn check_chains(grid: &ThetaGrid, chains: &[GaussianChain], i: usize) -> Result<()> {
    if grid.len() != chains.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: chains.len(),
        });
    }
    if chains.is_empty() {
        return Err(Error::InvalidConfig("empty theta grid".into()));
    }
    if i >= chains[0].len() {
        return Err(Error::IndexOutOfRange { t: i + 1, len: chains[0].len() });
    }
    Ok(())
}

/// Mixture over grid points of the Gaussian marginals `N(meanᵢ, varᵢ)`.
pub fn latent_marginal_gaussian(grid: &ThetaGrid, chains: &[GaussianChain], i: usize) -> Result<Marginal1D> {
    check_chains(grid, chains, i)?;
    let sds: Vec<f64> = chains.iter().map(|c| partial_inverse(&c.chol).sd(i)).collect();
    let xs = latent_abscissae(chains, &sds, i);
    let log_w: Vec<f64> = grid.normalized_weights().iter().map(|w| w.ln()).collect();
    let log_density = xs
        .iter()
        .map(|&x| log_sum_exp(chains.iter().zip(&sds).zip(&log_w).map(move |((c, s), lw)| lw + log_normal_pdf(x, c.mean[i], *s))))
        .collect();
    Ok(Marginal1D::from_log_density(xs, log_density))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceConfig {
    /// Points at which the nested approximation is evaluated per `θᵏ`.
    pub abscissae: usize,
    /// Their half-range, in Gaussian-marginal sds.
    pub half_width: f64,
    /// Largest series length accepted.
    pub max_len: usize,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        Self {
            abscissae: 31,
            half_width: 5.0,
            max_len: 200,
        }
    }
}

/// Unnormalised `log π̃(x_i = v | θ, y)`: the joint at `(v, m_{−i})` minus
/// `log π_G(x_{−i} | x_i = v)` at its own mode, with `m_{−i}` the
/// conditional mode. Fixing `x_i` splits the chain into two tridiagonal
/// blocks coupled to `v` only through linear terms.
fn nested_laplace_log_density<M: LatentGaussianModel + ?Sized>(
    model: &M,
    y: &[f64],
    theta: &crate::model::HyperParams,
    chain: &GaussianChain,
    i: usize,
    v: f64,
) -> Result<f64> {
    let n = y.len();
    let q = model.prior_precision(n, theta);
    let cfg = NewtonConfig::default();
    let mut total = -0.5 * q.diag()[i] * v * v + model.observation_derivatives(y[i], v, theta).0;
    let mut x = chain.mean.clone();
    x[i] = v;
    let mut half_logdet = 0.0;
    let mut segments = Vec::new();
    if i > 0 {
        segments.push((0, i));
    }
    if i + 1 < n {
        segments.push((i + 1, n));
    }
    for (start, end) in segments {
        let block = q.sub_block(start, end);
        let mut linear = vec![0.0; end - start];
        if end == i {
            linear[end - start - 1] = -q.offdiag()[i - 1] * v;
        } else {
            linear[0] = -q.offdiag()[i] * v;
        }
        let mode = newton_maximise(
            &block,
            Some(&linear),
            |t, xt| model.observation_derivatives(y[start + t], xt, theta),
            chain.mean[start..end].to_vec(),
            &cfg,
        )?;
        total += mode.value;
        half_logdet += 0.5 * mode.chol.logdet();
        x[start..end].copy_from_slice(&mode.x);
    }
    Ok(total - half_logdet)
}

/// Nested Laplace marginal of `x_i`, mixed over the grid.
///
/// Per grid point the nested log-density is evaluated on `abscissae`
/// points spanning `mean ± half_width·sd`; its deviation from the Gaussian
/// marginal is interpolated linearly (held constant outside), and each
/// component is normalised before mixing with the grid weights. Abscissae
/// where the inner optimisation fails are dropped and interpolated over.
pub fn latent_marginal_laplace<M: LatentGaussianModel + ?Sized>(
    model: &M,
    y: &[f64],
    grid: &ThetaGrid,
    chains: &[GaussianChain],
    i: usize,
    config: &LaplaceConfig,
) -> Result<Marginal1D> {
    check_chains(grid, chains, i)?;
    if y.len() > config.max_len {
        return Err(Error::InvalidConfig(format!(
            "nested Laplace marginals are limited to T <= {} (got {})",
            config.max_len,
            y.len()
        )));
    }
    if config.abscissae < 2 {
        return Err(Error::InvalidConfig("need at least two abscissae".into()));
    }
    let sds: Vec<f64> = chains.iter().map(|c| partial_inverse(&c.chol).sd(i)).collect();
    let xs = latent_abscissae(chains, &sds, i);
    let weights = grid.normalized_weights();

    let components: Vec<Vec<f64>> = grid
        .points
        .par_iter()
        .zip(chains)
        .zip(&sds)
        .map(|((point, chain), &sd)| -> Result<Vec<f64>> {
            let m = chain.mean[i];
            let nodes = linspace(m - config.half_width * sd, m + config.half_width * sd, config.abscissae);
            let mut known: Vec<(f64, f64)> = Vec::with_capacity(nodes.len());
            for &v in &nodes {
                match nested_laplace_log_density(model, y, &point.theta, chain, i, v) {
                    Ok(l) if l.is_finite() => known.push((v, l - log_normal_pdf(v, m, sd))),
                    Ok(_) | Err(Error::NoConvergence { .. }) | Err(Error::NotPositiveDefinite { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            if known.is_empty() {
                return Err(Error::NoConvergence { iterations: 0, gradient: f64::NAN });
            }
            let correction = |x: f64| -> f64 {
                let k = known.partition_point(|(v, _)| *v <= x);
                if k == 0 {
                    known[0].1
                } else if k == known.len() {
                    known[known.len() - 1].1
                } else {
                    let (x0, r0) = known[k - 1];
                    let (x1, r1) = known[k];
                    r0 + (r1 - r0) * (x - x0) / (x1 - x0)
                }
            };
            let logs: Vec<f64> = xs.iter().map(|&x| log_normal_pdf(x, m, sd) + correction(x)).collect();
            Ok(Marginal1D::from_log_density(xs.clone(), logs).log_density)
        })
        .collect::<Result<_>>()?;

    let log_density = (0..xs.len())
        .map(|j| log_sum_exp(components.iter().zip(&weights).map(move |(c, w)| w.ln() + c[j])))
        .collect();
    Ok(Marginal1D::from_log_density(xs, log_density))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inla::theta::{explore_theta_with, GridConfig};
    use crate::inla::gaussian::gaussian_approx;
    use crate::model::{simulate, HyperParams, LinearGaussianSsm, PoissonSsm};
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_point_grid_gives_spike() {
        let theta = HyperParams::new(0.5, 0.8, 1.5).unwrap();
        let grid = ThetaGrid::single(theta, -3.0);
        for axis in 0..3 {
            let m = hyper_marginal(&grid, axis).unwrap();
            assert_abs_diff_eq!(m.integral(), 1.0, epsilon = 1e-6);
            assert!((m.mode() - theta.get(axis)).abs() < 1e-4);
            let width = m.grid[m.grid.len() - 1] - m.grid[0];
            assert!(width < 1e-4, "width {width}");
        }
    }

    /// Product of three Gaussian factors on the internal scale.
    #[test]
    fn separable_posterior_marginals() {
        let means = [0.8, 1.5, 0.4];
        let sds = [0.3, 0.5, 0.2];
        let f = move |u: [f64; 3]| Ok((0..3).map(|j| log_normal_pdf(u[j], means[j], sds[j])).sum::<f64>());
        let cfg = GridConfig { dz: 0.5, drop: 12.0, ..Default::default() };
        let grid = explore_theta_with(f, [0.0; 3], &cfg).unwrap();
        for axis in 0..3 {
            let internal = hyper_marginal_internal(&grid, axis).unwrap();
            let natural = hyper_marginal(&grid, axis).unwrap();
            assert_abs_diff_eq!(internal.integral(), 1.0, epsilon = 1e-6);
            assert_abs_diff_eq!(natural.integral(), 1.0, epsilon = 1e-6);
            let mut sup: f64 = 0.0;
            for (&u, &l) in internal.grid.iter().zip(&internal.log_density) {
                sup = sup.max((l.exp() - log_normal_pdf(u, means[axis], sds[axis]).exp()).abs());
            }
            assert!(sup < 1e-3, "axis {axis}: internal sup error {sup}");
            // transformed factor on the natural scale
            let mut sup_nat: f64 = 0.0;
            for (&v, &l) in natural.grid.iter().zip(&natural.log_density) {
                let u = match axis {
                    0 => 2.0 * v.atanh(),
                    1 => -2.0 * v.ln(),
                    _ => v,
                };
                let exact = log_normal_pdf(u, means[axis], sds[axis]).exp() / natural_jacobian(axis, u);
                sup_nat = sup_nat.max((l.exp() - exact).abs() / exact.max(1.0));
            }
            assert!(sup_nat < 1e-3, "axis {axis}: natural sup error {sup_nat}");
            let spacing = internal.grid[1] - internal.grid[0];
            assert!((internal.mode() - grid.mode_internal[axis]).abs() <= spacing);
        }
        // α has unit Jacobian, so its natural-scale mode is θ*_α too
        let alpha = hyper_marginal(&grid, 2).unwrap();
        assert!((alpha.mode() - grid.mode.alpha).abs() <= alpha.grid[1] - alpha.grid[0]);
    }

    #[test]
    fn smoothing_preserves_grid_moments() {
        let prec = [[4.0, 1.5, 0.5], [1.5, 2.0, -0.3], [0.5, -0.3, 1.5]];
        let f = move |u: [f64; 3]| {
            let mut q = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    q += u[i] * prec[i][j] * u[j];
                }
            }
            Ok(-0.5 * q)
        };
        let cfg = GridConfig { drop: 2.25, ..Default::default() };
        let grid = explore_theta_with(f, [0.3, 0.3, 0.3], &cfg).unwrap();
        let cov = nalgebra::Matrix3::from_fn(|i, j| prec[i][j]).try_inverse().unwrap();
        for axis in 0..3 {
            let m = hyper_marginal_internal(&grid, axis).unwrap();
            // smoothing keeps the grid's first two moments
            let mean = grid.expectation(|u| u[axis]);
            let sd = (grid.expectation(|u| u[axis] * u[axis]) - mean * mean).sqrt();
            assert_abs_diff_eq!(m.mean(), mean, epsilon = 1e-6);
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-6);
            assert!((m.sd() / sd - 1.0).abs() < 1e-3, "axis {axis}: {} vs {sd}", m.sd());
            let exact = cov[(axis, axis)].sqrt();
            assert!(m.sd() > 0.6 * exact && m.sd() < 1.1 * exact, "axis {axis}: {} vs {exact}", m.sd());
        }
    }

    fn linear_gaussian_setup() -> (LinearGaussianSsm, Vec<f64>, HyperParams) {
        let model = LinearGaussianSsm::new(0.5);
        let theta = HyperParams::new(0.7, 0.6, 0.2).unwrap();
        let ds = simulate(&model, 12, &theta, 4).unwrap();
        (model, ds.y, theta)
    }

    #[test]
    fn gaussian_mixture_single_point_is_exact() {
        let (model, y, theta) = linear_gaussian_setup();
        let grid = ThetaGrid::single(theta, 0.0);
        let chain = gaussian_approx(&model, &y, &theta).unwrap();
        let marg = latent_marginal_gaussian(&grid, std::slice::from_ref(&chain), 5).unwrap();
        let dense = crate::linalg::dense_oracle(&chain.prec).unwrap();
        let sd = dense.inverse[(5, 5)].sqrt();
        for (&x, &l) in marg.grid.iter().zip(&marg.log_density) {
            assert_abs_diff_eq!(l.exp(), log_normal_pdf(x, chain.mean[5], sd).exp(), epsilon = 1e-8);
        }
        assert_abs_diff_eq!(marg.integral(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn duplicate_components_equal_one() {
        let (model, y, theta) = linear_gaussian_setup();
        let chain = gaussian_approx(&model, &y, &theta).unwrap();
        let one = latent_marginal_gaussian(&ThetaGrid::single(theta, 0.0), std::slice::from_ref(&chain), 3).unwrap();
        let mut two_grid = ThetaGrid::single(theta, 0.0);
        two_grid.points.push(two_grid.points[0].clone());
        let two = latent_marginal_gaussian(&two_grid, &[chain.clone(), chain], 3).unwrap();
        assert_eq!(one.grid, two.grid);
        for (a, b) in one.log_density.iter().zip(&two.log_density) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn laplace_equals_gaussian_for_gaussian_likelihood() {
        let (model, y, theta) = linear_gaussian_setup();
        let mut grid = ThetaGrid::single(theta, 0.0);
        let other = HyperParams::new(0.5, 0.8, 0.1).unwrap();
        grid.points.push(crate::inla::theta::ThetaPoint {
            theta: other,
            internal: other.to_internal(),
            z: [1.0, 0.0, 0.0],
            log_post: -0.7,
            weight: 1.0,
        });
        let chains: Vec<GaussianChain> = grid.points.iter().map(|p| gaussian_approx(&model, &y, &p.theta).unwrap()).collect();
        for i in [0, 6, 11] {
            let g = latent_marginal_gaussian(&grid, &chains, i).unwrap();
            let l = latent_marginal_laplace(&model, &y, &grid, &chains, i, &LaplaceConfig::default()).unwrap();
            assert_eq!(g.grid, l.grid);
            for (a, b) in g.log_density.iter().zip(&l.log_density) {
                assert_abs_diff_eq!(a.exp(), b.exp(), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn laplace_respects_length_cap() {
        let theta = HyperParams::new(0.7, 0.5, 1.0).unwrap();
        let ds = simulate(&PoissonSsm, 30, &theta, 2).unwrap();
        let grid = ThetaGrid::single(theta, 0.0);
        let chains = vec![gaussian_approx(&PoissonSsm, &ds.y, &theta).unwrap()];
        let cfg = LaplaceConfig { max_len: 20, ..Default::default() };
        assert!(latent_marginal_laplace(&PoissonSsm, &ds.y, &grid, &chains, 0, &cfg).is_err());
        let m = latent_marginal_laplace(&PoissonSsm, &ds.y, &grid, &chains, 29, &LaplaceConfig::default()).unwrap();
        assert_abs_diff_eq!(m.integral(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn symmetric_case_has_no_skew() {
        // Gaussian likelihood, zero data: marginal is symmetric about zero
        let model = LinearGaussianSsm::new(1.0);
        let theta = HyperParams::new(0.5, 1.0, 0.0).unwrap();
        let y = vec![0.0; 5];
        let grid = ThetaGrid::single(theta, 0.0);
        let chains = vec![gaussian_approx(&model, &y, &theta).unwrap()];
        let m = latent_marginal_laplace(&model, &y, &grid, &chains, 2, &LaplaceConfig::default()).unwrap();
        let mean = m.mean();
        let sd = m.sd();
        let third: Vec<f64> = m.grid.iter().zip(m.densities()).map(|(x, d)| ((x - mean) / sd).powi(3) * d).collect();
        let skew = trapezoid(&m.grid, &third);
        assert!(skew.abs() < 1e-8, "skew {skew}");
    }
}
