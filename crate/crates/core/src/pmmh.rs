//! Particle marginal Metropolis–Hastings over `θ`.
//!
//! The walk is Gaussian on the internal coordinates `(ρ̃, log σ⁻², α)`, so
//! the proposal ratio cancels and the prior is evaluated on the same scale.

use std::path::Path;

use crate::error::{Error, Result};
use crate::inla::{explore_theta, gaussian_approx, hyper_marginal, GridConfig, ThetaGrid};
use crate::model::{kalman_loglik, log_prior_internal, HyperParams, LatentGaussianModel, PriorSpec, StateSpaceModel, PARAM_NAMES};
use crate::proposal::build_proposal_inflated;
use crate::rng::{streams, RngStream};
use crate::smc::{run_filter, FilterConfig, ProposalKind};

/// Source of `log p̂_θ(y)`; `rng` is a fresh stream per call.
pub trait LikelihoodEstimator: Sync {
    fn name(&self) -> &'static str;

    /// Returns the estimate and, when requested by the estimator's
    /// configuration, one latent path.
    fn estimate(&self, theta: &HyperParams, rng: &mut RngStream) -> Result<(f64, Option<Vec<f64>>)>;
}

pub struct BootstrapPf<'a, M: ?Sized> {
    pub model: &'a M,
    pub y: &'a [f64],
    pub config: FilterConfig,
}

impl<M: StateSpaceModel + ?Sized> LikelihoodEstimator for BootstrapPf<'_, M> {
    fn name(&self) -> &'static str {
        "bootstrap"
    }

    fn estimate(&self, theta: &HyperParams, rng: &mut RngStream) -> Result<(f64, Option<Vec<f64>>)> {
        let out = run_filter(self.model, self.y, theta, ProposalKind::Bootstrap, &self.config, rng)?;
        Ok((out.loglik, out.trajectory))
    }
}

/// Builds the INLA proposal at every `θ` before filtering.
pub struct InlaPf<'a, M: ?Sized> {
    pub model: &'a M,
    pub y: &'a [f64],
    pub config: FilterConfig,
    pub inflation: f64,
}

impl<M: LatentGaussianModel + ?Sized> LikelihoodEstimator for InlaPf<'_, M> {
    fn name(&self) -> &'static str {
        "inla"
    }

    fn estimate(&self, theta: &HyperParams, rng: &mut RngStream) -> Result<(f64, Option<Vec<f64>>)> {
        let chain = gaussian_approx(self.model, self.y, theta)?;
        let proposal = build_proposal_inflated(&chain, self.inflation)?;
        let out = run_filter(self.model, self.y, theta, ProposalKind::InlaChain(&proposal), &self.config, rng)?;
        Ok((out.loglik, out.trajectory))
    }
}

/// Exact likelihood of the linear-Gaussian model.
pub struct ExactKalman<'a> {
    pub y: &'a [f64],
    pub obs_sd: f64,
}

impl LikelihoodEstimator for ExactKalman<'_> {
    fn name(&self) -> &'static str {
        "kalman"
    }

    fn estimate(&self, theta: &HyperParams, _rng: &mut RngStream) -> Result<(f64, Option<Vec<f64>>)> {
        Ok((kalman_loglik(self.y, theta, self.obs_sd), None))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitKind {
    /// Per-parameter modes of the INLA hyperparameter marginals.
    InlaModes,
    PriorDraw,
    Explicit(HyperParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PfKind {
    #[default]
    Bootstrap,
    Inla,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmmhConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// `√τ`.
    pub step_sd: f64,
    pub n_particles: usize,
    pub init: InitKind,
    pub pf: PfKind,
    /// Coordinates left out are held at their initial value.
    pub free: [bool; 3],
    /// Store one latent path with every kept sample.
    pub keep_trajectories: bool,
}

impl Default for PmmhConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 1_000,
            thin: 10,
            step_sd: 0.3,
            n_particles: 100,
            init: InitKind::InlaModes,
            pf: PfKind::Bootstrap,
            free: [true; 3],
            keep_trajectories: false,
        }
    }
}

impl PmmhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thinning interval must be at least 1".into()));
        }
        if !(self.step_sd > 0.0) || !self.step_sd.is_finite() {
            return Err(Error::InvalidConfig(format!("step sd must be positive, got {}", self.step_sd)));
        }
        if self.n_particles < 2 {
            return Err(Error::InvalidConfig("need at least 2 particles".into()));
        }
        Ok(())
    }

    /// `⌊(K − burn_in) / thin⌋`.
    pub fn sample_count(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// State of the chain after one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub theta: HyperParams,
    pub loglik: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmmhChain {
    /// Post burn-in, thinned.
    pub samples: Vec<HyperParams>,
    /// Iteration numbers (1-based) of the kept samples.
    pub sample_iterations: Vec<usize>,
    /// All iterations `1..=K`.
    pub trace: Vec<IterationRecord>,
    pub accept_rate: f64,
    pub init_used: HyperParams,
    pub init_loglik: f64,
    pub estimator_calls: usize,
    pub trajectories: Option<Vec<Vec<f64>>>,
}

impl PmmhChain {
    pub fn loglik_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.loglik).collect()
    }

    /// `iteration,rho,sigma,alpha,loglik,accepted` for every iteration.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "rho", "sigma", "alpha", "loglik", "accepted"])?;
        for (k, r) in self.trace.iter().enumerate() {
            w.write_record(&[
                (k + 1).to_string(),
                r.theta.rho.to_string(),
                r.theta.sigma.to_string(),
                r.theta.alpha.to_string(),
                r.loglik.to_string(),
                u8::from(r.accepted).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `log p̂* + log π(θ*) − log p̂ − log π(θ)` for a symmetric walk.
pub fn log_acceptance_ratio(loglik_prop: f64, logprior_prop: f64, loglik_cur: f64, logprior_cur: f64) -> f64 {
    if loglik_prop == f64::NEG_INFINITY || logprior_prop == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    loglik_prop + logprior_prop - loglik_cur - logprior_cur
}

/// Runs the sampler from `init`.
///
/// The estimate at the current state is stored and reused; each iteration
/// calls the estimator once, at the proposal. Iteration `k` uses stream `k`
/// of `seed` for the estimator (`0` for the initial state) and the `PMMH`
/// stream for the walk and the accept decisions. Proposals outside the
/// parameter space, and estimates that fail with zero weights, are rejected.
pub fn pmmh_run_with<E: LikelihoodEstimator + ?Sized>(
    estimator: &E,
    prior: &PriorSpec,
    config: &PmmhConfig,
    init: HyperParams,
    seed: u64,
) -> Result<PmmhChain> {
    config.validate()?;
    init.validate().map_err(|e| Error::InvalidInit(e.to_string()))?;
    let mut walk = RngStream::new(seed, streams::PMMH);
    let mut calls = 0usize;
    let mut evaluate = |theta: &HyperParams, k: usize| -> Result<(f64, Option<Vec<f64>>)> {
        calls += 1;
        match estimator.estimate(theta, &mut RngStream::new(seed, k as u64)) {
            Ok(v) => Ok(v),
            Err(Error::AllWeightsZero { .. }) => Ok((f64::NEG_INFINITY, None)),
            Err(e) => Err(e),
        }
    };

    let mut current_u = init.to_internal();
    let mut current = init;
    let (mut current_ll, mut current_path) = evaluate(&current, 0)?;
    if !current_ll.is_finite() {
        return Err(Error::InvalidInit(format!("likelihood estimate at the initial value is {current_ll}")));
    }
    let mut current_lp = log_prior_internal(current_u, prior);
    let init_loglik = current_ll;

    let mut trace = Vec::with_capacity(config.iterations);
    let mut samples = Vec::with_capacity(config.sample_count());
    let mut sample_iterations = Vec::with_capacity(config.sample_count());
    let mut trajectories = config.keep_trajectories.then(Vec::new);
    let mut accepted_total = 0usize;

    for k in 1..=config.iterations {
        let mut prop_u = current_u;
        for i in 0..3 {
            if config.free[i] {
                prop_u[i] += config.step_sd * walk.standard_normal();
            }
        }
        let log_u = walk.uniform().ln();
        let mut accepted = false;
        if let Ok(prop) = HyperParams::from_internal(prop_u) {
            let (ll, path) = evaluate(&prop, k)?;
            let lp = log_prior_internal(prop_u, prior);
            if log_u < log_acceptance_ratio(ll, lp, current_ll, current_lp) {
                current_u = prop_u;
                current = prop;
                current_ll = ll;
                current_lp = lp;
                current_path = path;
                accepted = true;
                accepted_total += 1;
            }
        }
        trace.push(IterationRecord {
            theta: current,
            loglik: current_ll,
            accepted,
        });
        if k > config.burn_in && (k - config.burn_in) % config.thin == 0 {
            samples.push(current);
            sample_iterations.push(k);
            if let Some(t) = trajectories.as_mut() {
                t.push(current_path.clone().unwrap_or_default());
            }
        }
    }

    Ok(PmmhChain {
        samples,
        sample_iterations,
        trace,
        accept_rate: accepted_total as f64 / config.iterations as f64,
        init_used: init,
        init_loglik,
        estimator_calls: calls,
        trajectories,
    })
}

/// Resolves the initial value and estimator from `config` and runs the
/// sampler on observations `y`.
pub fn pmmh_run<M: LatentGaussianModel + ?Sized>(
    model: &M,
    y: &[f64],
    prior: &PriorSpec,
    config: &PmmhConfig,
    seed: u64,
) -> Result<PmmhChain> {
    config.validate()?;
    let init = resolve_init(model, y, prior, config, seed)?;
    let filter = FilterConfig {
        keep_history: config.keep_trajectories,
        ..FilterConfig::new(config.n_particles)
    };
    match config.pf {
        PfKind::Bootstrap => pmmh_run_with(&BootstrapPf { model, y, config: filter }, prior, config, init, seed),
        PfKind::Inla => pmmh_run_with(
            &InlaPf {
                model,
                y,
                config: filter,
                inflation: 1.0,
            },
            prior,
            config,
            init,
            seed,
        ),
    }
}

pub fn resolve_init<M: LatentGaussianModel + ?Sized>(
    model: &M,
    y: &[f64],
    prior: &PriorSpec,
    config: &PmmhConfig,
    seed: u64,
) -> Result<HyperParams> {
    match config.init {
        InitKind::Explicit(theta) => {
            theta.validate().map_err(|e| Error::InvalidInit(e.to_string()))?;
            Ok(theta)
        }
        InitKind::PriorDraw => {
            let mut rng = RngStream::new(seed, streams::PRIOR_DRAW);
            prior.sample(&mut rng)
        }
        InitKind::InlaModes => {
            let grid = explore_theta(model, y, prior, &GridConfig::default())?;
            init_from_inla(&grid)
        }
    }
}

/// Per-parameter modes of the natural-scale hyperparameter marginals.
pub fn init_from_inla(grid: &ThetaGrid) -> Result<HyperParams> {
    let modes: Vec<f64> = (0..3).map(|axis| hyper_marginal(grid, axis).map(|m| m.mode())).collect::<Result<_>>()?;
    HyperParams::new(modes[0], modes[1], modes[2])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    /// Fraction of samples per bin.
    pub mass: Vec<f64>,
}

impl Histogram {
    pub const DEFAULT_BINS: usize = 50;

    /// Equal-width bins over `[min, max]`; the last bin is closed.
    pub fn new(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyChain);
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
        let mut mass = vec![0.0; bins];
        for &v in values {
            let i = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
            mass[i] += 1.0;
        }
        for m in &mut mass {
            *m /= values.len() as f64;
        }
        Ok(Self { edges, mass })
    }

    /// Centre of the fullest bin.
    pub fn mode(&self) -> f64 {
        let i = self
            .mass
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, &m)| if m > acc.1 { (i, m) } else { acc })
            .0;
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    /// `lower,upper,mass` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lower", "upper", "mass"])?;
        for (i, m) in self.mass.iter().enumerate() {
            w.write_record(&[self.edges[i].to_string(), self.edges[i + 1].to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: &'static str,
    pub mean: f64,
    pub sd: f64,
    /// Histogram mode.
    pub mode: f64,
    /// Batch-means standard error of the mean.
    pub mcse: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub params: Vec<ParamSummary>,
    pub accept_rate: f64,
    pub n_samples: usize,
}

impl ChainSummary {
    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }

    /// `param,mean,sd,mode,mcse` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["param", "mean", "sd", "mode", "mcse"])?;
        for p in &self.params {
            w.write_record(&[p.name.to_string(), p.mean.to_string(), p.sd.to_string(), p.mode.to_string(), p.mcse.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.iter().all(|v| *v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Standard error of the mean of a correlated series from `√n` batch means.
pub fn batch_means_se(values: &[f64]) -> f64 {
    let n = values.len();
    let batches = (n as f64).sqrt().floor().max(1.0) as usize;
    let size = n / batches;
    if batches < 2 || size == 0 {
        return 0.0;
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    mean_sd(&means).1 / (batches as f64).sqrt()
}

/// Mean, sd, histogram mode and batch-means error of each parameter.
pub fn chain_summary(chain: &PmmhChain) -> Result<ChainSummary> {
    if chain.samples.is_empty() {
        return Err(Error::EmptyChain);
    }
    let params = (0..3)
        .map(|axis| {
            let values: Vec<f64> = chain.samples.iter().map(|s| s.get(axis)).collect();
            let (mean, sd) = mean_sd(&values);
            let histogram = Histogram::new(&values, Histogram::DEFAULT_BINS)?;
            Ok(ParamSummary {
                name: PARAM_NAMES[axis],
                mean,
                sd,
                mode: histogram.mode(),
                mcse: batch_means_se(&values),
                histogram,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ChainSummary {
        params,
        accept_rate: chain.accept_rate,
        n_samples: chain.samples.len(),
    })
}
