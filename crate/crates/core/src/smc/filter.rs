use rayon::prelude::*;

use super::resample::Resampler;
use crate::error::{Error, Result};
use crate::model::{HyperParams, StateSpaceModel};
use crate::proposal::ProposalChain;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy)]
pub enum ProposalKind<'a> {
    /// Prior dynamics; weights reduce to `g`.
    Bootstrap,
    InlaChain(&'a ProposalChain),
}

impl ProposalKind<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            ProposalKind::Bootstrap => "bootstrap",
            ProposalKind::InlaChain(_) => "inla",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub n_particles: usize,
    pub resampler: Resampler,
    /// `None` resamples at every step. `Some(c)` resamples only when
    /// `ESS < c·N`, so `Some(0.0)` never resamples.
    pub ess_threshold: Option<f64>,
    /// Keep particle and ancestor history so that one path can be traced.
    pub keep_history: bool,
}

impl FilterConfig {
    pub fn new(n_particles: usize) -> Self {
        Self {
            n_particles,
            resampler: Resampler::Systematic,
            ess_threshold: None,
            keep_history: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 particles, got {}", self.n_particles)));
        }
        if let Some(c) = self.ess_threshold {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidConfig(format!("ESS threshold must lie in [0, 1], got {c}")));
            }
        }
        Ok(())
    }
}

/// Particle state at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    pub x: Vec<f64>,
    /// 0-based parent indices; the identity when no resampling happened.
    pub ancestors: Vec<usize>,
    /// Incremental log weights `log w_tⁱ`.
    pub logw: Vec<f64>,
    /// Normalised weights.
    pub w: Vec<f64>,
    pub loglik_running: f64,
}

impl ParticleSystem {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.w.iter().map(|w| w * w).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// `log p̂_θ(y_{1:T})`.
    pub loglik: f64,
    pub ess: Vec<f64>,
    pub filt_mean: Vec<f64>,
    pub filt_var: Vec<f64>,
    /// `log p̂(y_t | y_{1:t−1})`.
    pub per_step_loglik: Vec<f64>,
    pub resampled: Vec<bool>,
    /// One ancestral path, when history was kept.
    pub trajectory: Option<Vec<f64>>,
    /// Final particle system.
    pub last: ParticleSystem,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalises `log_prior_w + logw`; returns weights and `log Σ`.
fn normalise(log_prior_w: &[f64], logw: &[f64], t: usize) -> Result<(Vec<f64>, f64)> {
    let combined: Vec<f64> = log_prior_w.iter().zip(logw).map(|(a, b)| a + b).collect();
    let lse = log_sum_exp(&combined);
    if !lse.is_finite() {
        return Err(Error::AllWeightsZero { t: t + 1 });
    }
    let mut w: Vec<f64> = combined.iter().map(|c| (c - lse).exp()).collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    Ok((w, lse))
}

fn moments(w: &[f64], x: &[f64]) -> (f64, f64) {
    let m: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
    let v: f64 = w.iter().zip(x).map(|(a, b)| a * (b - m) * (b - m)).sum();
    (m, v)
}

fn nan_to_neg_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Sequential importance sampling with resampling.
///
/// At `t = 1` particles are drawn from `q₁` and weighted by `μ g / q₁`; at
/// later steps they are resampled, moved by `q_t` and weighted by
/// `f g / q_t`. The likelihood factor at each step is the weighted mean of
/// the incremental weights, with uniform parent weights after resampling.
pub fn run_filter<M: StateSpaceModel + ?Sized>(
    model: &M,
    y: &[f64],
    theta: &HyperParams,
    proposal: ProposalKind<'_>,
    config: &FilterConfig,
    rng: &mut RngStream,
) -> Result<FilterOutput> {
    config.validate()?;
    theta.validate()?;
    model.validate_observations(y)?;
    let len = y.len();
    if len == 0 {
        return Err(Error::InvalidDataset("empty observation series".into()));
    }
    if let ProposalKind::InlaChain(p) = proposal {
        if p.len() != len {
            return Err(Error::DimensionMismatch { expected: len, got: p.len() });
        }
    }
    let n = config.n_particles;
    let log_n = (n as f64).ln();

    let mut ess = Vec::with_capacity(len);
    let mut filt_mean = Vec::with_capacity(len);
    let mut filt_var = Vec::with_capacity(len);
    let mut per_step = Vec::with_capacity(len);
    let mut resampled = Vec::with_capacity(len);
    let mut history: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();

    let mut x = vec![0.0; n];
    let mut logw = vec![0.0; n];
    for i in 0..n {
        let (xi, lw) = match proposal {
            ProposalKind::Bootstrap => {
                let xi = model.sample_initial(theta, rng);
                (xi, model.log_observation(y[0], xi, theta))
            }
            ProposalKind::InlaChain(p) => {
                let xi = p.q1_sample(rng);
                let lw = model.log_initial(xi, theta) + model.log_observation(y[0], xi, theta) - p.q1_logpdf(xi);
                (xi, lw)
            }
        };
        x[i] = xi;
        logw[i] = nan_to_neg_inf(lw);
    }
    let uniform = vec![-log_n; n];
    let (mut w, lse) = normalise(&uniform, &logw, 0)?;
    let mut loglik = lse;
    per_step.push(lse);
    resampled.push(false);
    let mut ancestors: Vec<usize> = (0..n).collect();
    if config.keep_history {
        history.push((x.clone(), ancestors.clone()));
    }
    let record = |w: &[f64], x: &[f64], ess: &mut Vec<f64>, fm: &mut Vec<f64>, fv: &mut Vec<f64>| {
        ess.push(1.0 / w.iter().map(|v| v * v).sum::<f64>());
        let (m, v) = moments(w, x);
        fm.push(m);
        fv.push(v);
    };
    record(&w, &x, &mut ess, &mut filt_mean, &mut filt_var);

    for t in 1..len {
        let do_resample = match config.ess_threshold {
            None => true,
            Some(c) => ess[t - 1] < c * n as f64,
        };
        let log_parent: Vec<f64>;
        if do_resample {
            ancestors = config.resampler.resample(&w, n, rng)?;
            log_parent = uniform.clone();
        } else {
            ancestors = (0..n).collect();
            log_parent = w.iter().map(|v| v.ln()).collect();
        }
        resampled.push(do_resample);
        let mut new_x = vec![0.0; n];
        for i in 0..n {
            let prev = x[ancestors[i]];
            let (xi, lw) = match proposal {
                ProposalKind::Bootstrap => {
                    let xi = model.sample_transition(prev, theta, rng);
                    (xi, model.log_observation(y[t], xi, theta))
                }
                ProposalKind::InlaChain(p) => {
                    let xi = p.qt_sample(t, prev, rng)?;
                    let lw = model.log_transition(xi, prev, theta) + model.log_observation(y[t], xi, theta)
                        - p.qt_logpdf(t, prev, xi)?;
                    (xi, lw)
                }
            };
            new_x[i] = xi;
            logw[i] = nan_to_neg_inf(lw);
        }
        x = new_x;
        let (nw, lse) = normalise(&log_parent, &logw, t)?;
        w = nw;
        loglik += lse;
        per_step.push(lse);
        if config.keep_history {
            history.push((x.clone(), ancestors.clone()));
        }
        record(&w, &x, &mut ess, &mut filt_mean, &mut filt_var);
    }

    let trajectory = if config.keep_history {
        let pick = Resampler::Multinomial.resample(&w, 1, rng)?[0];
        let mut path = vec![0.0; len];
        let mut k = pick;
        for t in (0..len).rev() {
            path[t] = history[t].0[k];
            k = history[t].1[k];
        }
        Some(path)
    } else {
        None
    };

    Ok(FilterOutput {
        loglik,
        ess,
        filt_mean,
        filt_var,
        per_step_loglik: per_step,
        resampled,
        trajectory,
        last: ParticleSystem {
            x,
            ancestors,
            logw,
            w,
            loglik_running: loglik,
        },
    })
}

/// Summary of independent filter runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateSummary {
    /// Ordered by replicate index.
    pub runs: Vec<FilterOutput>,
    pub loglik_mean: f64,
    /// Sample variance (`R − 1` denominator; zero for one run).
    pub loglik_var: f64,
    pub mean_ess: Vec<f64>,
    /// Mean over runs of `|filt_mean_t − reference_t|`, when a reference
    /// was given.
    pub filt_abs_error: Option<Vec<f64>>,
}

impl ReplicateSummary {
    pub fn logliks(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.loglik).collect()
    }
}

/// Runs `replicates` filters in parallel; run `r` uses stream `r` of
/// `base_seed`.
#[allow(clippy::too_many_arguments)]
pub fn replicate_filters<M: StateSpaceModel + ?Sized>(
    model: &M,
    y: &[f64],
    theta: &HyperParams,
    proposal: ProposalKind<'_>,
    config: &FilterConfig,
    replicates: usize,
    base_seed: u64,
    reference: Option<&[f64]>,
) -> Result<ReplicateSummary> {
    if replicates == 0 {
        return Err(Error::InvalidConfig("need at least one replicate".into()));
    }
    if let Some(r) = reference {
        if r.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: y.len(), got: r.len() });
        }
    }
    let runs: Vec<FilterOutput> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(base_seed, r as u64);
            run_filter(model, y, theta, proposal, config, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(summarise(runs, reference))
}

pub fn summarise(runs: Vec<FilterOutput>, reference: Option<&[f64]>) -> ReplicateSummary {
    let r = runs.len() as f64;
    let loglik_mean = runs.iter().map(|o| o.loglik).sum::<f64>() / r;
    let loglik_var = if runs.len() > 1 {
        runs.iter().map(|o| (o.loglik - loglik_mean).powi(2)).sum::<f64>() / (r - 1.0)
    } else {
        0.0
    };
    let len = runs[0].ess.len();
    let mean_ess = (0..len).map(|t| runs.iter().map(|o| o.ess[t]).sum::<f64>() / r).collect();
    let filt_abs_error = reference.map(|reference| {
        (0..len)
            .map(|t| runs.iter().map(|o| (o.filt_mean[t] - reference[t]).abs()).sum::<f64>() / r)
            .collect()
    });
    ReplicateSummary {
        runs,
        loglik_mean,
        loglik_var,
        mean_ess,
        filt_abs_error,
    }
}
