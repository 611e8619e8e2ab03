//! Sequential proposal kernels from the joint Gaussian approximation.
//!
//! Conditioning `π_G(x_{1:T})` on the history collapses, by the Markov
//! structure of the chain, to a first-order Gaussian autoregression:
//! `x₁ ~ N(μ₁, v₁)`, `x_t | x_{t−1} ~ N(μ_t + a_t (x_{t−1} − μ_{t−1}), v_t)`.
//! The kernels condition on all observations, so the filter built on them
//! needs the whole series upfront.

use std::path::Path;

use crate::error::{Error, Result};
use crate::inla::GaussianChain;
use crate::linalg::partial_inverse;
use crate::model::log_normal_pdf;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalChain {
    pub mu: Vec<f64>,
    /// `a[t−1]` regresses `x_t` on `x_{t−1}` (0-based `t ≥ 1`).
    pub a: Vec<f64>,
    /// Conditional variances, already multiplied by the inflation factor.
    pub v: Vec<f64>,
    pub inflation: f64,
}

/// Builds the kernels with no variance inflation.
pub fn build_proposal(chain: &GaussianChain) -> Result<ProposalChain> {
    build_proposal_inflated(chain, 1.0)
}

/// Builds the kernels with every `v_t` multiplied by `kappa ≥ 1`.
pub fn build_proposal_inflated(chain: &GaussianChain, kappa: f64) -> Result<ProposalChain> {
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::InvalidConfig(format!("variance inflation must be >= 1, got {kappa}")));
    }
    let n = chain.len();
    let p = partial_inverse(&chain.chol);
    let mut a = Vec::with_capacity(n.saturating_sub(1));
    let mut v = Vec::with_capacity(n);
    v.push(p.var[0]);
    for t in 1..n {
        let coef = p.cov1[t - 1] / p.var[t - 1];
        a.push(coef);
        v.push(p.var[t] - coef * p.cov1[t - 1]);
    }
    for (t, vt) in v.iter_mut().enumerate() {
        if !(*vt > 0.0) || !vt.is_finite() {
            return Err(Error::NonPositiveConditionalVariance { t: t + 1, value: *vt });
        }
        *vt *= kappa;
    }
    Ok(ProposalChain {
        mu: chain.mean.clone(),
        a,
        v,
        inflation: kappa,
    })
}

impl ProposalChain {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn q1_sample(&self, rng: &mut RngStream) -> f64 {
        rng.normal(self.mu[0], self.v[0].sqrt())
    }

    pub fn q1_logpdf(&self, x1: f64) -> f64 {
        log_normal_pdf(x1, self.mu[0], self.v[0].sqrt())
    }

    /// Mean of `q_t(· | x_prev)` for 0-based `t ≥ 1`.
    pub fn qt_mean(&self, t: usize, x_prev: f64) -> Result<f64> {
        self.check_index(t)?;
        Ok(self.mu[t] + self.a[t - 1] * (x_prev - self.mu[t - 1]))
    }

    pub fn qt_sample(&self, t: usize, x_prev: f64, rng: &mut RngStream) -> Result<f64> {
        let mean = self.qt_mean(t, x_prev)?;
        Ok(rng.normal(mean, self.v[t].sqrt()))
    }

    pub fn qt_logpdf(&self, t: usize, x_prev: f64, x: f64) -> Result<f64> {
        let mean = self.qt_mean(t, x_prev)?;
        Ok(log_normal_pdf(x, mean, self.v[t].sqrt()))
    }

    /// `log q₁(x₁) + Σ log q_t(x_t | x_{t−1})`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: x.len(),
            });
        }
        let mut total = self.q1_logpdf(x[0]);
        for t in 1..x.len() {
            total += self.qt_logpdf(t, x[t - 1], x[t])?;
        }
        Ok(total)
    }

    fn check_index(&self, t: usize) -> Result<()> {
        if t == 0 || t >= self.len() {
            return Err(Error::IndexOutOfRange { t, len: self.len() });
        }
        Ok(())
    }

    /// `t,mu,a,v` rows with 1-based `t`; `a` is empty at `t = 1`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "mu", "a", "v"])?;
        for t in 0..self.len() {
            let a = if t == 0 { String::new() } else { self.a[t - 1].to_string() };
            w.write_record(&[(t + 1).to_string(), self.mu[t].to_string(), a, self.v[t].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
