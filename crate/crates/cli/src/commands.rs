//! Subcommand definitions and their implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ssm_inla::inla::{explore_theta, gaussian_approx};
use ssm_inla::model::Dataset;
use ssm_inla::proposal::build_proposal;
use ssm_inla::smc::{replicate_filters, FilterConfig, ProposalKind};

use crate::acceptance::{self, Criterion};
use crate::config::{parse_init, parse_list, parse_model, parse_pf, ExperimentConfig, ProposalTheta};
use crate::error::{CliError, CliResult, Context};
use crate::study::{
    dataset_for, reference_filter, render_pf_plots, run_inla_fit, run_pf_study, run_pmmh_study, write_inla_fit, write_pf_tables, write_pmmh,
};
use crate::tables::{write_rows, EssPoint, FilteringPoint, ReplicateLoglik, VarianceRow};

#[derive(Debug, Parser)]
#[command(name = "ssm-inla", version, about = "INLA proposals, particle filters and PMMH for Poisson state-space models")]
pub struct Cli {
    /// Master seed (overrides the preset and config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Fewer replicates, one series length and a short chain.
    #[arg(long, global = true)]
    pub quick: bool,
    /// Particles of the bootstrap reference run.
    #[arg(long, global = true)]
    pub reference_n: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset.
    Simulate(ExperimentArgs),
    /// Fit INLA: hyperparameter marginals and latent summaries.
    InlaFit(DataArgs),
    /// Replicated runs of one particle filter.
    PfRun(PfRunArgs),
    /// Bootstrap against INLA proposals over every (N, T).
    PfCompare(DataArgs),
    /// Particle marginal Metropolis-Hastings.
    Pmmh(PmmhArgs),
    /// simulate, inla-fit, pf-compare and pmmh with the fig1 and fig4 presets,
    /// followed by the acceptance checks.
    FullStudy,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[arg(long, default_value = "fig1")]
    pub preset: String,
    /// `key = value` file with [experiment], [prior], [inla] and [pmmh] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// poisson or linear-gaussian.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub obs_sd: Option<f64>,
    /// Series lengths, comma separated.
    #[arg(long, value_name = "T,...")]
    pub length: Option<String>,
    /// rho,sigma,alpha
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<String>,
    /// Particle counts, comma separated.
    #[arg(long, value_name = "N,...")]
    pub particles: Option<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// systematic, stratified or multinomial.
    #[arg(long)]
    pub resampler: Option<String>,
    /// Build the INLA proposal at the true θ (`true`) or at the mode of
    /// π̃(θ | y) (`inla-mode`).
    #[arg(long)]
    pub proposal_theta: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Dataset CSV (`t,y[,x_true]`); simulated from the configuration when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PfRunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// bootstrap or inla.
    #[arg(long, default_value = "bootstrap")]
    pub proposal: String,
}

#[derive(Debug, Clone, Args)]
pub struct PmmhArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub step_sd: Option<f64>,
    /// Particles per likelihood estimate.
    #[arg(long)]
    pub pmmh_particles: Option<usize>,
    /// inla, prior or rho,sigma,alpha
    #[arg(long)]
    pub init: Option<String>,
    /// bootstrap or inla.
    #[arg(long)]
    pub pf: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct Globals {
    pub seed: Option<u64>,
    pub quick: bool,
    pub reference_n: Option<usize>,
}

impl Cli {
    fn globals(&self) -> Globals {
        Globals {
            seed: self.seed,
            quick: self.quick,
            reference_n: self.reference_n,
        }
    }
}

pub fn resolve(args: &ExperimentArgs, g: Globals) -> CliResult<ExperimentConfig> {
    let mut c = ExperimentConfig::preset(&args.preset)?;
    if let Some(path) = &args.config {
        c = ExperimentConfig::load(path, c)?;
    }
    let usage = CliError::Usage;
    if let Some(m) = &args.model {
        let obs_sd = args.obs_sd.or(c.model.obs_sd()).unwrap_or(1.0);
        c.model = parse_model(m, obs_sd).map_err(usage)?;
    } else if let Some(sd) = args.obs_sd {
        c.model = parse_model(c.model.name(), sd).map_err(usage)?;
    }
    if let Some(v) = &args.length {
        c.lengths = parse_list(v).map_err(usage)?;
    }
    if let Some(v) = &args.theta {
        let t: Vec<f64> = parse_list(v).map_err(usage)?;
        if t.len() != 3 {
            return Err(CliError::Usage(format!("--theta needs rho,sigma,alpha, got `{v}`")));
        }
        c.theta = ssm_inla::model::HyperParams::new(t[0], t[1], t[2]).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(v) = &args.particles {
        c.particles = parse_list(v).map_err(usage)?;
    }
    if let Some(r) = args.replicates {
        c.replicates = r;
    }
    if let Some(r) = &args.resampler {
        c.resampler = r.parse().map_err(|e: ssm_inla::Error| CliError::Usage(e.to_string()))?;
    }
    if let Some(p) = &args.proposal_theta {
        c.proposal_theta = p.parse().map_err(usage)?;
    }
    apply_globals(c, g)
}

fn apply_globals(mut c: ExperimentConfig, g: Globals) -> CliResult<ExperimentConfig> {
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(n) = g.reference_n {
        c.reference_n = n;
    }
    if g.quick {
        c = c.quick();
    }
    c.validate()?;
    Ok(c)
}

/// The dataset named by `--data`, or a simulated series of the first
/// configured length.
fn load_or_simulate(data: &Option<PathBuf>, c: &ExperimentConfig) -> CliResult<Dataset> {
    match data {
        Some(path) => {
            let ds = Dataset::read(path).context(format!("reading {}", path.display()))?;
            if !ds.meta.model.is_empty() && ds.meta.model != c.model.name() {
                return Err(CliError::Usage(format!(
                    "{} holds {} data but the configuration uses the {} model",
                    path.display(),
                    ds.meta.model,
                    c.model.name()
                )));
            }
            c.model.build().validate_observations(&ds.y).context(format!("{}", path.display()))?;
            Ok(ds)
        }
        None => dataset_for(c, c.lengths[0]),
    }
}

fn summary_stats(ds: &Dataset) -> String {
    let n = ds.len() as f64;
    let mean = ds.y.iter().sum::<f64>() / n;
    let var = ds.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let min = ds.y.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ds.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!("T = {}, mean {mean:.3}, variance {var:.3}, min {min}, max {max}", ds.len())
}

pub fn cmd_simulate(c: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut paths = Vec::new();
    for (i, &len) in c.lengths.iter().enumerate() {
        let ds = dataset_for(c, len)?;
        let path = if i == 0 { out.join("data.csv") } else { out.join(format!("data_T{len}.csv")) };
        ds.write(&path).context(format!("writing {}", path.display()))?;
        println!("{}: {}", path.display(), summary_stats(&ds));
        paths.push(path);
    }
    Ok(paths)
}

pub fn cmd_inla_fit(c: &ExperimentConfig, data: &Option<PathBuf>, out: &Path) -> CliResult<()> {
    let ds = load_or_simulate(data, c)?;
    let fit = run_inla_fit(c, &ds)?;
    write_inla_fit(&fit, out)?;
    let m = fit.modes();
    println!(
        "INLA fit on T = {}: {} grid points; marginal modes rho {:.4}, sigma {:.4}, alpha {:.4}",
        ds.len(),
        fit.grid.points.len(),
        m[0],
        m[1],
        m[2]
    );
    Ok(())
}

pub fn cmd_pf_run(c: &ExperimentConfig, data: &Option<PathBuf>, proposal: &str, out: &Path) -> CliResult<()> {
    let ds = load_or_simulate(data, c)?;
    let model = c.model.build();
    let n = c.particles[0];
    let filter = FilterConfig {
        resampler: c.resampler,
        ..FilterConfig::new(n)
    };
    let chain;
    let prop;
    let kind = match proposal {
        "bootstrap" => ProposalKind::Bootstrap,
        "inla" => {
            let at = match c.proposal_theta {
                ProposalTheta::True => c.theta,
                ProposalTheta::InlaMode => explore_theta(model.as_ref(), &ds.y, &c.prior, &c.grid).context("hyperparameter mode")?.mode,
            };
            chain = gaussian_approx(model.as_ref(), &ds.y, &at).context("Gaussian approximation")?;
            prop = build_proposal(&chain).context("INLA proposal")?;
            ProposalKind::InlaChain(&prop)
        }
        other => return Err(CliError::Usage(format!("unknown proposal `{other}` (expected bootstrap or inla)"))),
    };
    let reference = reference_filter(model.as_ref(), &ds, c)?;
    let s = replicate_filters(model.as_ref(), &ds.y, &c.theta, kind, &filter, c.replicates, c.seed, Some(&reference))
        .context(format!("{proposal} filter"))?;
    std::fs::create_dir_all(out)?;
    let logliks: Vec<ReplicateLoglik> = s.logliks().into_iter().enumerate().map(|(replicate, loglik)| ReplicateLoglik { replicate, loglik }).collect();
    write_rows(&out.join("loglik.csv"), &logliks)?;
    let ess: Vec<EssPoint> = s.mean_ess.iter().enumerate().map(|(t, &mean_ess)| EssPoint { t: t + 1, mean_ess }).collect();
    write_rows(&out.join("ess.csv"), &ess)?;
    let err = s.filt_abs_error.as_ref().expect("reference given");
    let r = s.runs.len() as f64;
    let filtering: Vec<FilteringPoint> = (0..ds.len())
        .map(|t| FilteringPoint {
            t: t + 1,
            mean: s.runs.iter().map(|o| o.filt_mean[t]).sum::<f64>() / r,
            reference: reference[t],
            abs_error: err[t],
        })
        .collect();
    write_rows(&out.join("filtering.csv"), &filtering)?;
    println!(
        "{proposal} filter, T = {}, N = {n}, R = {}: mean loglik {:.4}, variance {:.5}",
        ds.len(),
        c.replicates,
        s.loglik_mean,
        s.loglik_var
    );
    Ok(())
}

fn print_variances(rows: &[VarianceRow]) {
    println!("{:<10} {:>6} {:>6} {:>14} {:>12}", "method", "N", "T", "mean loglik", "variance");
    for r in rows {
        println!("{:<10} {:>6} {:>6} {:>14.4} {:>12.5}", r.method, r.n, r.len, r.mean, r.variance);
    }
}

pub fn cmd_pf_compare(c: &ExperimentConfig, data: &Option<PathBuf>, out: &Path) -> CliResult<crate::study::PfStudy> {
    let datasets = match data {
        Some(_) => vec![load_or_simulate(data, c)?],
        None => c.lengths.iter().map(|&len| dataset_for(c, len)).collect::<CliResult<_>>()?,
    };
    let study = run_pf_study(c, &datasets)?;
    write_pf_tables(&study, out)?;
    render_pf_plots(out)?;
    print_variances(&study.variance_rows());
    Ok(study)
}

pub fn apply_pmmh_args(mut c: ExperimentConfig, a: &PmmhArgs, g: Globals) -> CliResult<ExperimentConfig> {
    let usage = CliError::Usage;
    if let Some(v) = a.iterations {
        c.pmmh.iterations = v;
    }
    if let Some(v) = a.burn_in {
        c.pmmh.burn_in = v;
    }
    if let Some(v) = a.thin {
        c.pmmh.thin = v;
    }
    if let Some(v) = a.step_sd {
        c.pmmh.step_sd = v;
    }
    if let Some(v) = a.pmmh_particles {
        c.pmmh.n_particles = v;
    }
    if let Some(v) = &a.init {
        c.pmmh.init = parse_init(v).map_err(usage)?;
    }
    if let Some(v) = &a.pf {
        c.pmmh.pf = parse_pf(v).map_err(usage)?;
    }
    if g.quick {
        c = c.quick();
    }
    c.validate()?;
    Ok(c)
}

pub fn cmd_pmmh(c: &ExperimentConfig, data: &Option<PathBuf>, out: &Path) -> CliResult<crate::study::PmmhStudy> {
    let ds = load_or_simulate(data, c)?;
    let study = run_pmmh_study(c, &ds)?;
    write_pmmh(&study, out)?;
    println!("PMMH on T = {}: acceptance rate {:.3}, {} samples", ds.len(), study.summary.accept_rate, study.summary.n_samples);
    for p in &study.summary.params {
        println!("  {:<6} mean {:.4} sd {:.4} mode {:.4}", p.name, p.mean, p.sd, p.mode);
    }
    Ok(study)
}

/// Runs every stage into `out` and writes `report.txt`. Returns the
/// criteria; stage errors are reported and abort the study.
pub fn cmd_full_study(g: Globals, out: &Path) -> CliResult<Vec<Criterion>> {
    let start = Instant::now();
    let fig1 = apply_globals(acceptance::fig1_config(), g)?;
    let fig4 = apply_globals(acceptance::fig4_config(), g)?;
    let mut log = Vec::new();
    let stage = |name: &str, log: &mut Vec<String>, r: CliResult<()>| -> CliResult<()> {
        match r {
            Ok(()) => {
                log.push(format!("stage {name}: ok"));
                Ok(())
            }
            Err(e) => {
                log.push(format!("stage {name}: FAILED: {e}"));
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join("report.txt"), log.join("\n") + "\n")?;
                Err(e)
            }
        }
    };

    let data_dir = out.join("data");
    stage("simulate", &mut log, cmd_simulate(&fig1, &data_dir).map(|_| ()))?;
    let data = Some(data_dir.join("data.csv"));
    stage("inla-fit", &mut log, cmd_inla_fit(&fig1, &data, &out.join("inla")))?;
    let pf = cmd_pf_compare(&fig1, &None, &out.join("pf"));
    let pf_study = match pf {
        Ok(s) => {
            log.push("stage pf-compare: ok".into());
            Some(s)
        }
        Err(e) => {
            stage("pf-compare", &mut log, Err(e))?;
            None
        }
    };
    let pmmh_data = out.join("data").join("fig4.csv");
    let ds4 = dataset_for(&fig4, fig4.lengths[0])?;
    ds4.write(&pmmh_data).context("writing fig4 data")?;
    let pmmh = match cmd_pmmh(&fig4, &Some(pmmh_data), &out.join("pmmh")) {
        Ok(s) => {
            log.push("stage pmmh: ok".into());
            Some(s)
        }
        Err(e) => {
            stage("pmmh", &mut log, Err(e))?;
            None
        }
    };
    let (pf_study, pmmh) = (pf_study.expect("stage succeeded"), pmmh.expect("stage succeeded"));

    let checked = |r: CliResult<Criterion>, id: u8, name: &'static str| {
        r.unwrap_or_else(|e| Criterion {
            id,
            name,
            passed: false,
            detail: format!("error: {e}"),
        })
    };
    let criteria = vec![
        checked(acceptance::gaussian_exactness(), 1, "Gaussian-likelihood exactness"),
        checked(acceptance::chain_rule_identity(), 2, "Chain-rule proposal identity"),
        checked(acceptance::unbiasedness(), 3, "Likelihood-estimate unbiasedness"),
        acceptance::variance_reduction(&pf_study),
        acceptance::ess_dominance(&pf_study),
        acceptance::filtering_parity(&pf_study),
        checked(acceptance::pmmh_correctness(), 7, "PMMH correctness"),
        acceptance::pmmh_protocol(&pmmh),
        checked(acceptance::small_t_oracle(), 9, "Small-T quadrature oracle"),
        acceptance::resampling_suite(),
    ];
    let mut report = log.join("\n") + "\n\n";
    if g.quick {
        report.push_str("quick mode: reduced replicates, reference size and chain length; results are indicative only\n");
    }
    report.push_str(&acceptance::report(&criteria));
    report.push_str(&format!("elapsed: {:.1} s\n", start.elapsed().as_secs_f64()));
    std::fs::write(out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(criteria)
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    let g = cli.globals();
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(&resolve(a, g)?, out).map(|_| ()),
        Command::InlaFit(a) => cmd_inla_fit(&resolve(&a.experiment, g)?, &a.data, out),
        Command::PfRun(a) => cmd_pf_run(&resolve(&a.data.experiment, g)?, &a.data.data, &a.proposal, out),
        Command::PfCompare(a) => cmd_pf_compare(&resolve(&a.experiment, g)?, &a.data, out).map(|_| ()),
        Command::Pmmh(a) => {
            let c = apply_pmmh_args(resolve(&a.data.experiment, g)?, a, g)?;
            cmd_pmmh(&c, &a.data.data, out).map(|_| ())
        }
        Command::FullStudy => {
            let criteria = cmd_full_study(g, out)?;
            let failed: Vec<String> = criteria.iter().filter(|c| !c.passed).map(|c| c.id.to_string()).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Acceptance(format!("acceptance criteria failed: {}", failed.join(", "))))
            }
        }
    }
}
