//! Experiment configuration: presets plus a `key = value` file format.
//!
//! ```text
//! # comment
//! [experiment]
//! model = poisson
//! lengths = 100, 500
//! particles = 100, 1000
//! rho = 0.7
//!
//! [pmmh]
//! iterations = 10000
//! ```
//!
//! Unknown sections and keys are errors reported with their line number.

use std::path::Path;
use std::str::FromStr;

use ssm_inla::inla::GridConfig;
use ssm_inla::model::{HyperParams, LatentGaussianModel, LinearGaussianSsm, PoissonSsm, PriorSpec};
use ssm_inla::pmmh::{InitKind, PfKind, PmmhConfig};
use ssm_inla::smc::Resampler;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Poisson,
    LinearGaussian { obs_sd: f64 },
}

impl ModelKind {
    pub fn build(&self) -> Box<dyn LatentGaussianModel> {
        match *self {
            ModelKind::Poisson => Box::new(PoissonSsm),
            ModelKind::LinearGaussian { obs_sd } => Box::new(LinearGaussianSsm::new(obs_sd)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Poisson => "poisson",
            ModelKind::LinearGaussian { .. } => "linear-gaussian",
        }
    }

    pub fn obs_sd(&self) -> Option<f64> {
        match *self {
            ModelKind::Poisson => None,
            ModelKind::LinearGaussian { obs_sd } => Some(obs_sd),
        }
    }
}

/// Hyperparameters at which the INLA proposal is built. The filter itself
/// always targets `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProposalTheta {
    #[default]
    True,
    /// Mode of `π̃(θ | y)`, as a fit with unknown hyperparameters would give.
    InlaMode,
}

impl FromStr for ProposalTheta {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "true" => Ok(ProposalTheta::True),
            "inla-mode" => Ok(ProposalTheta::InlaMode),
            other => Err(format!("proposal theta must be `true` or `inla-mode`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: String,
    pub model: ModelKind,
    /// Series lengths `T`.
    pub lengths: Vec<usize>,
    pub theta: HyperParams,
    /// Particle counts `N`.
    pub particles: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    /// Particles of the bootstrap run used as the filtering reference.
    pub reference_n: usize,
    pub resampler: Resampler,
    pub proposal_theta: ProposalTheta,
    pub prior: PriorSpec,
    pub grid: GridConfig,
    pub pmmh: PmmhConfig,
}

pub const PRESETS: [&str; 2] = ["fig1", "fig4"];

impl ExperimentConfig {
    pub fn preset(name: &str) -> CliResult<Self> {
        let base = Self {
            id: name.to_string(),
            model: ModelKind::Poisson,
            lengths: vec![100],
            theta: HyperParams::new(0.7, 0.5, 1.0).expect("valid preset"),
            particles: vec![100],
            replicates: 50,
            seed: 1,
            reference_n: 100_000,
            resampler: Resampler::Systematic,
            proposal_theta: ProposalTheta::True,
            prior: PriorSpec::default(),
            grid: GridConfig::default(),
            pmmh: PmmhConfig::default(),
        };
        match name {
            "fig1" => Ok(Self {
                lengths: vec![100, 500],
                particles: vec![100, 1000],
                ..base
            }),
            "fig4" => Ok(Self {
                theta: HyperParams::new(0.85, 0.5, 0.5).expect("valid preset"),
                ..base
            }),
            other => Err(CliError::Usage(format!("unknown preset `{other}` (expected one of {})", PRESETS.join(", ")))),
        }
    }

    /// Fewer replicates, a smaller reference run, one series length and a
    /// short chain, for smoke runs.
    pub fn quick(mut self) -> Self {
        self.replicates = self.replicates.min(10);
        self.reference_n = self.reference_n.min(10_000);
        self.lengths.truncate(1);
        self.pmmh.iterations = self.pmmh.iterations.min(1_000);
        self.pmmh.burn_in = self.pmmh.burn_in.min(self.pmmh.iterations / 10);
        self.pmmh.thin = self.pmmh.thin.min(2);
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return bad("series lengths must be positive".into());
        }
        if self.particles.is_empty() || self.particles.iter().any(|&n| n < 2) {
            return bad("particle counts must be at least 2".into());
        }
        if self.replicates == 0 {
            return bad("need at least one replicate".into());
        }
        if self.reference_n < 2 {
            return bad("reference particle count must be at least 2".into());
        }
        if let ModelKind::LinearGaussian { obs_sd } = self.model {
            if !(obs_sd > 0.0) {
                return bad(format!("observation sd must be positive, got {obs_sd}"));
            }
        }
        self.theta.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.pmmh.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path, base: Self) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        base.apply(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}:{m}", path.display())),
            other => other,
        })
    }

    /// Applies the settings in `text` on top of `self`.
    pub fn apply(mut self, text: &str) -> CliResult<Self> {
        let mut section = String::new();
        let mut theta = [self.theta.rho, self.theta.sigma, self.theta.alpha];
        let mut obs_sd = self.model.obs_sd().unwrap_or(1.0);
        let mut model_name = self.model.name().to_string();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |m: String| CliError::Usage(format!("{line_no}: {m}"));
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err(format!("malformed section header `{line}`")))?.trim();
                if !["experiment", "prior", "inla", "pmmh"].contains(&name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if section.is_empty() {
                return Err(err(format!("key `{key}` outside of a section")));
            }
            let unknown = || err(format!("unknown key `{key}` in section [{section}]"));
            match (section.as_str(), key) {
                ("experiment", "id") => self.id = value.to_string(),
                ("experiment", "model") => model_name = value.to_string(),
                ("experiment", "obs_sd") => obs_sd = parse(value).map_err(err)?,
                ("experiment", "lengths") => self.lengths = parse_list(value).map_err(err)?,
                ("experiment", "particles") => self.particles = parse_list(value).map_err(err)?,
                ("experiment", "rho") => theta[0] = parse(value).map_err(err)?,
                ("experiment", "sigma") => theta[1] = parse(value).map_err(err)?,
                ("experiment", "alpha") => theta[2] = parse(value).map_err(err)?,
                ("experiment", "replicates") => self.replicates = parse(value).map_err(err)?,
                ("experiment", "seed") => self.seed = parse(value).map_err(err)?,
                ("experiment", "reference_n") => self.reference_n = parse(value).map_err(err)?,
                ("experiment", "resampler") => self.resampler = value.parse().map_err(|e: ssm_inla::Error| err(e.to_string()))?,
                ("experiment", "proposal_theta") => self.proposal_theta = value.parse().map_err(err)?,
                ("prior", "m_rho") => self.prior.m_rho = parse(value).map_err(err)?,
                ("prior", "s_rho") => self.prior.s_rho = parse(value).map_err(err)?,
                ("prior", "m_alpha") => self.prior.m_alpha = parse(value).map_err(err)?,
                ("prior", "s_alpha") => self.prior.s_alpha = parse(value).map_err(err)?,
                ("prior", "a") => self.prior.a = parse(value).map_err(err)?,
                ("prior", "b") => self.prior.b = parse(value).map_err(err)?,
                ("inla", "dz") => self.grid.dz = parse(value).map_err(err)?,
                ("inla", "drop") => self.grid.drop = parse(value).map_err(err)?,
                ("pmmh", "iterations") => self.pmmh.iterations = parse(value).map_err(err)?,
                ("pmmh", "burn_in") => self.pmmh.burn_in = parse(value).map_err(err)?,
                ("pmmh", "thin") => self.pmmh.thin = parse(value).map_err(err)?,
                ("pmmh", "step_sd") => self.pmmh.step_sd = parse(value).map_err(err)?,
                ("pmmh", "particles") => self.pmmh.n_particles = parse(value).map_err(err)?,
                ("pmmh", "init") => self.pmmh.init = parse_init(value).map_err(err)?,
                ("pmmh", "pf") => self.pmmh.pf = parse_pf(value).map_err(err)?,
                _ => return Err(unknown()),
            }
        }
        self.theta = HyperParams::new(theta[0], theta[1], theta[2]).map_err(|e| CliError::Usage(e.to_string()))?;
        self.model = parse_model(&model_name, obs_sd).map_err(CliError::Usage)?;
        Ok(self)
    }
}

pub fn parse<T: FromStr>(value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse `{value}`"))
}

pub fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String> {
    value.split(',').map(|v| parse(v.trim())).collect()
}

pub fn parse_model(name: &str, obs_sd: f64) -> Result<ModelKind, String> {
    match name {
        "poisson" => Ok(ModelKind::Poisson),
        "linear-gaussian" | "lg" => Ok(ModelKind::LinearGaussian { obs_sd }),
        other => Err(format!("unknown model `{other}` (expected poisson or linear-gaussian)")),
    }
}

pub fn parse_init(value: &str) -> Result<InitKind, String> {
    match value {
        "inla" => Ok(InitKind::InlaModes),
        "prior" => Ok(InitKind::PriorDraw),
        other => {
            let v: Vec<f64> = parse_list(other).map_err(|_| format!("init must be `inla`, `prior` or `rho,sigma,alpha`, got `{other}`"))?;
            if v.len() != 3 {
                return Err(format!("explicit init needs three values, got {}", v.len()));
            }
            HyperParams::new(v[0], v[1], v[2]).map(InitKind::Explicit).map_err(|e| e.to_string())
        }
    }
}

pub fn parse_pf(value: &str) -> Result<PfKind, String> {
    match value {
        "bootstrap" => Ok(PfKind::Bootstrap),
        "inla" => Ok(PfKind::Inla),
        other => Err(format!("unknown particle filter `{other}` (expected bootstrap or inla)")),
    }
}
