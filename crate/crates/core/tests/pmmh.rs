use ssm_inla::model::{kalman_loglik, log_normal_pdf, simulate, HyperParams, LinearGaussianSsm, PriorSpec};
use ssm_inla::pmmh::{chain_summary, pmmh_run_with, ExactKalman, Histogram, PmmhConfig};

#[test]
fn exact_chain_on_alpha_matches_quadrature() {
    let obs_sd = 0.7;
    let model = LinearGaussianSsm::new(obs_sd);
    let truth = HyperParams::new(0.6, 0.5, 0.4).unwrap();
    let y = simulate(&model, 40, &truth, 21).unwrap().y;
    let prior = PriorSpec::default();
    let config = PmmhConfig {
        iterations: 200_000,
        burn_in: 1_000,
        thin: 1,
        step_sd: 0.5,
        free: [false, false, true],
        ..Default::default()
    };
    let chain = pmmh_run_with(&ExactKalman { y: &y, obs_sd }, &prior, &config, truth, 5).unwrap();
    assert!(chain.samples.iter().all(|s| s.rho == truth.rho && s.sigma == truth.sigma));
    let alphas: Vec<f64> = chain.samples.iter().map(|s| s.alpha).collect();
    let hist = Histogram::new(&alphas, 40).unwrap();

    let log_post = |a: f64| {
        let theta = HyperParams { alpha: a, ..truth };
        kalman_loglik(&y, &theta, obs_sd) + log_normal_pdf(a, prior.m_alpha, prior.s_alpha)
    };
    // fine midpoint rule on [lo − 1, hi + 1]
    let (lo, hi) = (hist.edges[0] - 1.0, hist.edges[40] + 1.0);
    let m = 40_000;
    let h = (hi - lo) / m as f64;
    let xs: Vec<f64> = (0..m).map(|i| lo + (i as f64 + 0.5) * h).collect();
    let lp: Vec<f64> = xs.iter().map(|&a| log_post(a)).collect();
    let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = lp.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = dens.iter().sum();
    let mass_between = |a: f64, b: f64| xs.iter().zip(&dens).filter(|(x, _)| **x >= a && **x < b).map(|(_, d)| d).sum::<f64>() / z;

    let mut bin_err = 0.0f64;
    let mut cdf_err = 0.0f64;
    let (mut cdf_chain, mut cdf_exact) = (0.0, mass_between(lo, hist.edges[0]));
    for (i, &mass) in hist.mass.iter().enumerate() {
        let exact = mass_between(hist.edges[i], hist.edges[i + 1]);
        bin_err = bin_err.max((mass - exact).abs());
        cdf_chain += mass;
        cdf_exact += exact;
        cdf_err = cdf_err.max((cdf_chain - cdf_exact).abs());
    }
    assert!(bin_err <= 3e-2, "bin mass error {bin_err}");
    assert!(cdf_err <= 3e-2, "cdf error {cdf_err}");
    let summary = chain_summary(&chain).unwrap();
    assert!(summary.accept_rate > 0.1 && summary.accept_rate < 0.9);
}

#[test]
fn sample_count_formula() {
    for (k, b, thin) in [(10, 0, 1), (10, 3, 2), (100, 10, 7), (1000, 999, 1), (57, 5, 13)] {
        let config = PmmhConfig {
            iterations: k,
            burn_in: b,
            thin,
            ..Default::default()
        };
        let y = [0.1, 0.2, -0.3];
        let chain = pmmh_run_with(&ExactKalman { y: &y, obs_sd: 1.0 }, &PriorSpec::default(), &config, HyperParams::new(0.5, 1.0, 0.0).unwrap(), 1).unwrap();
        assert_eq!(chain.samples.len(), (k - b) / thin);
        assert_eq!(chain.samples.len(), config.sample_count());
        assert_eq!(chain.estimator_calls, k + 1);
    }
}
