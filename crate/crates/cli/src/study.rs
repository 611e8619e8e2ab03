//! The computations behind the experiment commands, kept separate from
//! file output so that the acceptance checks can reuse them.

use std::path::Path;

use ssm_inla::inla::{explore_theta, gaussian_approx, grid_chains, hyper_marginal, GaussianChain, Marginal1D, ThetaGrid};
use ssm_inla::linalg::partial_inverse;
use ssm_inla::model::{simulate, Dataset, LatentGaussianModel, PARAM_NAMES};
use ssm_inla::pmmh::{chain_summary, init_from_inla, pmmh_run, ChainSummary, InitKind, PmmhChain};
use ssm_inla::proposal::build_proposal;
use ssm_inla::rng::{streams, RngStream};
use ssm_inla::smc::{replicate_filters, run_filter, FilterConfig, ProposalKind, ReplicateSummary};

use crate::config::{ExperimentConfig, ProposalTheta};
use crate::error::{CliError, CliResult, Context};
use crate::plot::{box_plot, line_plot, write_dat, BoxGroup, Series};
use crate::tables::{read_rows, write_rows, DensityRow, EssRow, FilteringRow, LatentRow, LoglikRow, VarianceRow};

pub const METHODS: [&str; 2] = ["bootstrap", "inla"];

/// Simulated series of length `len` for `config`.
pub fn dataset_for(config: &ExperimentConfig, len: usize) -> CliResult<Dataset> {
    let model = config.model.build();
    let mut ds = simulate(model.as_ref(), len, &config.theta, config.seed).context("simulate")?;
    ds.meta.obs_sd = config.model.obs_sd();
    Ok(ds)
}

/// Filtering means of one bootstrap run with `n` particles on the
/// reference stream.
pub fn reference_filter(model: &dyn LatentGaussianModel, ds: &Dataset, config: &ExperimentConfig) -> CliResult<Vec<f64>> {
    let mut rng = RngStream::new(config.seed, streams::REFERENCE);
    let filter = FilterConfig {
        resampler: config.resampler,
        ..FilterConfig::new(config.reference_n)
    };
    let out = run_filter(model, &ds.y, &config.theta, ProposalKind::Bootstrap, &filter, &mut rng)
        .context(format!("reference filter (T = {}, N = {})", ds.len(), config.reference_n))?;
    Ok(out.filt_mean)
}

#[derive(Debug, Clone)]
pub struct PfCell {
    pub method: &'static str,
    pub n: usize,
    pub len: usize,
    pub summary: ReplicateSummary,
}

#[derive(Debug, Clone)]
pub struct PfStudy {
    pub cells: Vec<PfCell>,
    /// `(T, reference filtering means)`.
    pub references: Vec<(usize, Vec<f64>)>,
}

impl PfStudy {
    pub fn get(&self, method: &str, n: usize, len: usize) -> Option<&PfCell> {
        self.cells.iter().find(|c| c.method == method && c.n == n && c.len == len)
    }

    pub fn loglik_rows(&self) -> Vec<LoglikRow> {
        self.cells
            .iter()
            .flat_map(|c| {
                c.summary.logliks().into_iter().enumerate().map(move |(r, loglik)| LoglikRow {
                    method: c.method.into(),
                    n: c.n,
                    len: c.len,
                    replicate: r,
                    loglik,
                })
            })
            .collect()
    }

    pub fn variance_rows(&self) -> Vec<VarianceRow> {
        self.cells
            .iter()
            .map(|c| VarianceRow {
                method: c.method.into(),
                n: c.n,
                len: c.len,
                replicates: c.summary.runs.len(),
                mean: c.summary.loglik_mean,
                variance: c.summary.loglik_var,
            })
            .collect()
    }

    pub fn ess_rows(&self) -> Vec<EssRow> {
        self.cells
            .iter()
            .flat_map(|c| {
                c.summary.mean_ess.iter().enumerate().map(move |(t, &e)| EssRow {
                    method: c.method.into(),
                    n: c.n,
                    len: c.len,
                    t: t + 1,
                    mean_ess: e,
                })
            })
            .collect()
    }

    pub fn filtering_rows(&self) -> Vec<FilteringRow> {
        let mut rows = Vec::new();
        for c in &self.cells {
            let Some((_, reference)) = self.references.iter().find(|(len, _)| *len == c.len) else { continue };
            let Some(err) = &c.summary.filt_abs_error else { continue };
            let runs = c.summary.runs.len() as f64;
            for t in 0..c.len {
                rows.push(FilteringRow {
                    method: c.method.into(),
                    n: c.n,
                    len: c.len,
                    t: t + 1,
                    mean: c.summary.runs.iter().map(|r| r.filt_mean[t]).sum::<f64>() / runs,
                    reference: reference[t],
                    abs_error: err[t],
                });
            }
        }
        rows
    }
}

/// Bootstrap and INLA filters at every `(T, N)` of `config`, `R` replicates
/// each, against a large bootstrap reference per `T`.
pub fn run_pf_study(config: &ExperimentConfig, datasets: &[Dataset]) -> CliResult<PfStudy> {
    let model = config.model.build();
    let mut cells = Vec::new();
    let mut references = Vec::new();
    for ds in datasets {
        let len = ds.len();
        let at = match config.proposal_theta {
            ProposalTheta::True => config.theta,
            ProposalTheta::InlaMode => explore_theta(model.as_ref(), &ds.y, &config.prior, &config.grid).context(format!("hyperparameter mode (T = {len})"))?.mode,
        };
        let chain = gaussian_approx(model.as_ref(), &ds.y, &at).context(format!("Gaussian approximation (T = {len})"))?;
        let proposal = build_proposal(&chain).context(format!("INLA proposal (T = {len})"))?;
        let reference = reference_filter(model.as_ref(), ds, config)?;
        for &n in &config.particles {
            let filter = FilterConfig {
                resampler: config.resampler,
                ..FilterConfig::new(n)
            };
            for method in METHODS {
                let kind = if method == "inla" { ProposalKind::InlaChain(&proposal) } else { ProposalKind::Bootstrap };
                let summary = replicate_filters(model.as_ref(), &ds.y, &config.theta, kind, &filter, config.replicates, config.seed, Some(&reference))
                    .context(format!("{method} filter (T = {len}, N = {n})"))?;
                cells.push(PfCell { method, n, len, summary });
            }
        }
        references.push((len, reference));
    }
    Ok(PfStudy { cells, references })
}

pub fn write_pf_tables(study: &PfStudy, dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(&dir.join("loglik.csv"), &study.loglik_rows())?;
    write_rows(&dir.join("variance.csv"), &study.variance_rows())?;
    write_rows(&dir.join("ess.csv"), &study.ess_rows())?;
    write_rows(&dir.join("filtering.csv"), &study.filtering_rows())?;
    Ok(())
}

fn distinct<T: PartialEq + Copy>(values: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Box plots of the log-likelihood estimates and ESS / filtering-error
/// curves, rendered from the CSV tables in `dir` alone.
pub fn render_pf_plots(dir: &Path) -> CliResult<()> {
    let logliks: Vec<LoglikRow> = read_rows(&dir.join("loglik.csv"))?;
    let ess: Vec<EssRow> = read_rows(&dir.join("ess.csv"))?;
    let filtering: Vec<FilteringRow> = read_rows(&dir.join("filtering.csv"))?;
    for len in distinct(logliks.iter().map(|r| r.len)) {
        let groups: Vec<BoxGroup> = distinct(logliks.iter().filter(|r| r.len == len).map(|r| r.n))
            .into_iter()
            .flat_map(|n| {
                let logliks = &logliks;
                METHODS.iter().map(move |m| BoxGroup {
                    label: format!("{m} N={n}"),
                    values: logliks.iter().filter(|r| r.len == len && r.n == n && r.method == *m).map(|r| r.loglik).collect(),
                })
            })
            .collect();
        std::fs::write(dir.join(format!("loglik_T{len}.svg")), box_plot(&format!("Log-likelihood estimates, T = {len}"), "log-likelihood", &groups))?;
        let max_r = groups.iter().map(|g| g.values.len()).max().unwrap_or(0);
        let rows: Vec<Vec<f64>> = (0..max_r).map(|r| groups.iter().map(|g| g.values.get(r).copied().unwrap_or(f64::NAN)).collect()).collect();
        let header: Vec<String> = groups.iter().map(|g| g.label.replace(' ', "_")).collect();
        write_dat(&dir.join(format!("loglik_T{len}.dat")), &header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?;

        let curves = |values: &dyn Fn(&str, usize) -> Vec<(f64, f64)>| -> Vec<Series> {
            distinct(ess.iter().filter(|r| r.len == len).map(|r| r.n))
                .into_iter()
                .flat_map(|n| METHODS.iter().map(move |m| (n, *m)))
                .map(|(n, m)| Series {
                    label: format!("{m} N={n}"),
                    points: values(m, n),
                    dashed: m == "inla",
                })
                .collect()
        };
        let ess_series = curves(&|m, n| ess.iter().filter(|r| r.len == len && r.n == n && r.method == m).map(|r| (r.t as f64, r.mean_ess)).collect());
        std::fs::write(dir.join(format!("ess_T{len}.svg")), line_plot(&format!("Mean ESS, T = {len}"), "t", "mean ESS", &ess_series))?;
        write_series_dat(&dir.join(format!("ess_T{len}.dat")), &ess_series)?;
        let err_series = curves(&|m, n| filtering.iter().filter(|r| r.len == len && r.n == n && r.method == m).map(|r| (r.t as f64, r.abs_error)).collect());
        std::fs::write(
            dir.join(format!("filtering_T{len}.svg")),
            line_plot(&format!("Mean absolute filtering error, T = {len}"), "t", "|error|", &err_series),
        )?;
        write_series_dat(&dir.join(format!("filtering_T{len}.dat")), &err_series)?;
    }
    Ok(())
}

/// One column per series, aligned on the x values of the first.
fn write_series_dat(path: &Path, series: &[Series]) -> CliResult<()> {
    let Some(first) = series.first() else { return Ok(()) };
    let mut header = vec!["t".to_string()];
    header.extend(series.iter().map(|s| s.label.replace(' ', "_")));
    let rows: Vec<Vec<f64>> = first
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| std::iter::once(p.0).chain(series.iter().map(|s| s.points.get(i).map_or(f64::NAN, |q| q.1))).collect())
        .collect();
    write_dat(path, &header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)
}

#[derive(Debug, Clone)]
pub struct InlaFit {
    pub grid: ThetaGrid,
    pub chains: Vec<GaussianChain>,
    /// Natural-scale marginals of `(ρ, σ, α)`.
    pub marginals: Vec<Marginal1D>,
}

impl InlaFit {
    /// Mean and sd of the grid mixture of Gaussian latent marginals.
    pub fn latent_rows(&self) -> Vec<LatentRow> {
        let w = self.grid.normalized_weights();
        let pinv: Vec<_> = self.chains.iter().map(|c| partial_inverse(&c.chol)).collect();
        let len = self.chains[0].mean.len();
        (0..len)
            .map(|t| {
                let mean: f64 = self.chains.iter().zip(&w).map(|(c, w)| w * c.mean[t]).sum();
                let second: f64 = self.chains.iter().zip(&pinv).zip(&w).map(|((c, p), w)| w * (p.var[t] + c.mean[t] * c.mean[t])).sum();
                LatentRow {
                    t: t + 1,
                    mean,
                    sd: (second - mean * mean).max(0.0).sqrt(),
                }
            })
            .collect()
    }

    pub fn modes(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.marginals[a].mode())
    }
}

pub fn run_inla_fit(config: &ExperimentConfig, ds: &Dataset) -> CliResult<InlaFit> {
    let model = config.model.build();
    let grid = explore_theta(model.as_ref(), &ds.y, &config.prior, &config.grid).context("hyperparameter exploration")?;
    let chains = grid_chains(model.as_ref(), &ds.y, &grid).context("Gaussian approximations on the grid")?;
    let marginals = (0..3).map(|a| hyper_marginal(&grid, a)).collect::<ssm_inla::Result<_>>().context("hyperparameter marginals")?;
    Ok(InlaFit { grid, chains, marginals })
}

pub fn write_inla_fit(fit: &InlaFit, dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    for (a, m) in fit.marginals.iter().enumerate() {
        let rows: Vec<DensityRow> = m.grid.iter().zip(m.densities()).map(|(&value, density)| DensityRow { value, density }).collect();
        write_rows(&dir.join(format!("theta_{}_marginal.csv", PARAM_NAMES[a])), &rows)?;
    }
    write_rows(&dir.join("latent.csv"), &fit.latent_rows())?;
    let g = &fit.grid;
    let modes = fit.modes();
    let mut report = String::new();
    report.push_str(&format!("posterior mode (rho, sigma, alpha): {:.6} {:.6} {:.6}\n", g.mode.rho, g.mode.sigma, g.mode.alpha));
    report.push_str(&format!("internal mode: {:?}\n", g.mode_internal));
    report.push_str(&format!("log posterior at mode: {:.6}\n", g.mode_log_post));
    report.push_str(&format!("scale S: {:?}\n", g.scale));
    report.push_str(&format!("marginal modes (rho, sigma, alpha): {:.6} {:.6} {:.6}\n", modes[0], modes[1], modes[2]));
    report.push_str(&format!("grid points: {}\n", g.points.len()));
    report.push_str(&format!("optimiser evaluations: {}\n", g.optimiser_evals));
    report.push_str(&format!("hessian fallback: {}\n", g.hessian_fallback));
    report.push_str(&format!("failed grid points: {}\n", g.failed_points));
    std::fs::write(dir.join("report.txt"), report)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PmmhStudy {
    pub chain: PmmhChain,
    pub summary: ChainSummary,
    /// INLA fit used for the initial value, when requested.
    pub inla: Option<InlaFit>,
}

/// Runs the sampler; with `InitKind::InlaModes` the INLA fit is kept for
/// comparison.
pub fn run_pmmh_study(config: &ExperimentConfig, ds: &Dataset) -> CliResult<PmmhStudy> {
    let model = config.model.build();
    let mut pmmh = config.pmmh;
    let inla = if pmmh.init == InitKind::InlaModes {
        let fit = run_inla_fit(config, ds)?;
        pmmh.init = InitKind::Explicit(init_from_inla(&fit.grid).context("INLA initial value")?);
        Some(fit)
    } else {
        None
    };
    let chain = pmmh_run(model.as_ref(), &ds.y, &config.prior, &pmmh, config.seed).context("PMMH")?;
    let summary = chain_summary(&chain).context("chain summary")?;
    Ok(PmmhStudy { chain, summary, inla })
}

pub fn write_pmmh(study: &PmmhStudy, dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    let io = |e: ssm_inla::Error| CliError::Io(e.to_string());
    study.chain.write_csv(&dir.join("chain.csv")).map_err(io)?;
    study.summary.write_csv(&dir.join("summary.csv")).map_err(io)?;
    for (a, p) in study.summary.params.iter().enumerate() {
        p.histogram.write_csv(&dir.join(format!("hist_{}.csv", p.name))).map_err(io)?;
        let h = &p.histogram;
        let hist: Vec<(f64, f64)> = h
            .mass
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let width = h.edges[i + 1] - h.edges[i];
                (0.5 * (h.edges[i] + h.edges[i + 1]), if width > 0.0 { m / width } else { 0.0 })
            })
            .collect();
        let mut series = vec![Series { label: "PMMH".into(), points: hist, dashed: false }];
        if let Some(fit) = &study.inla {
            let m = &fit.marginals[a];
            series.push(Series {
                label: "INLA".into(),
                points: m.grid.iter().copied().zip(m.densities()).collect(),
                dashed: true,
            });
        }
        std::fs::write(dir.join(format!("posterior_{}.svg", p.name)), line_plot(&format!("Posterior of {}", p.name), p.name, "density", &series))?;
    }
    let trace: Vec<(f64, f64)> = study.chain.trace.iter().enumerate().map(|(k, r)| ((k + 1) as f64, r.loglik)).collect();
    std::fs::write(
        dir.join("loglik_trace.svg"),
        line_plot("Log-likelihood estimate at the current state", "iteration", "log-likelihood", &[Series { label: "chain".into(), points: trace, dashed: false }]),
    )?;
    let mut report = format!(
        "acceptance rate: {:.4}\nsamples: {}\nestimator calls: {}\ninitial value (rho, sigma, alpha): {:.6} {:.6} {:.6}\n",
        study.summary.accept_rate, study.summary.n_samples, study.chain.estimator_calls, study.chain.init_used.rho, study.chain.init_used.sigma, study.chain.init_used.alpha
    );
    for p in &study.summary.params {
        report.push_str(&format!("{}: mean {:.6} sd {:.6} mode {:.6} mcse {:.6}\n", p.name, p.mean, p.sd, p.mode, p.mcse));
    }
    if let Some(fit) = &study.inla {
        let m = fit.modes();
        report.push_str(&format!("INLA marginal modes (rho, sigma, alpha): {:.6} {:.6} {:.6}\n", m[0], m[1], m[2]));
    }
    std::fs::write(dir.join("report.txt"), report)?;
    Ok(())
}
