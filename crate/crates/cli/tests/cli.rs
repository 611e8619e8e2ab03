use std::path::Path;
use std::process::{Command, Output};

use ssm_inla_cli::study::render_pf_plots;
use ssm_inla_cli::tables::{duplicate_key, read_rows, EssPoint, EssRow, FilteringPoint, FilteringRow, LatentRow, LoglikRow, ReplicateLoglik, VarianceRow};

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssm-inla"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = run(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_fig1_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--preset", "fig1", "--seed", "1"]);
    let csv = std::fs::read(dir.path().join("data.csv")).unwrap();
    let text = String::from_utf8(csv.clone()).unwrap();
    assert_eq!(text.lines().count(), 101);
    assert!(text.starts_with("t,y,x_true\n"));
    let meta = std::fs::read_to_string(dir.path().join("data.meta.json")).unwrap();
    assert!(meta.contains("\"rho\": 0.7") && meta.contains("\"sigma\": 0.5") && meta.contains("\"alpha\": 1.0"));
    assert_eq!(std::fs::read_to_string(dir.path().join("data_T500.csv")).unwrap().lines().count(), 501);

    let again = tempfile::tempdir().unwrap();
    ok(again.path(), &["simulate", "--preset", "fig1", "--seed", "1"]);
    assert_eq!(std::fs::read(again.path().join("data.csv")).unwrap(), csv);
    assert_eq!(std::fs::read_to_string(again.path().join("data.meta.json")).unwrap(), meta);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["simulate", "--length", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(dir.path(), &["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(dir.path(), &["simulate", "--preset", "fig7"]);
    assert_eq!(o.status.code(), Some(1));

    let cfg = dir.path().join("bad.ini");
    std::fs::write(&cfg, "[experiment]\nrho = 0.5\nbogus = 3\n").unwrap();
    let o = run(dir.path(), &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(":3:") && err.contains("bogus"), "{err}");

    let o = run(dir.path(), &["inla-fit", "--data", dir.path().join("missing.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(run(dir.path(), &["--help"]).status.success());
}

#[test]
fn config_file_drives_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lg.ini");
    std::fs::write(&cfg, "[experiment]\nmodel = linear-gaussian\nobs_sd = 0.3\nlengths = 12\nalpha = -2.0\n").unwrap();
    ok(dir.path(), &["simulate", "--config", cfg.to_str().unwrap(), "--seed", "4"]);
    let meta = std::fs::read_to_string(dir.path().join("data.meta.json")).unwrap();
    assert!(meta.contains("linear-gaussian") && meta.contains("\"obs_sd\": 0.3"));
    assert_eq!(std::fs::read_to_string(dir.path().join("data.csv")).unwrap().lines().count(), 13);
}

#[test]
fn pf_run_writes_parseable_tables() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["pf-run", "--length", "25", "--particles", "40", "--replicates", "4", "--reference-n", "2000", "--proposal", "inla"]);
    let logliks: Vec<ReplicateLoglik> = read_rows(&dir.path().join("loglik.csv")).unwrap();
    assert_eq!(logliks.iter().map(|r| r.replicate).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    let ess: Vec<EssPoint> = read_rows(&dir.path().join("ess.csv")).unwrap();
    assert_eq!(ess.len(), 25);
    assert!(ess.iter().all(|e| e.mean_ess >= 1.0 && e.mean_ess <= 40.0));
    let filt: Vec<FilteringPoint> = read_rows(&dir.path().join("filtering.csv")).unwrap();
    assert!(filt.iter().all(|f| (f.abs_error >= 0.0) && f.t >= 1 && f.t <= 25));
}

#[test]
fn pf_compare_tables_are_keyed_and_plots_rerender() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &["pf-compare", "--length", "30,45", "--particles", "20,60", "--replicates", "5", "--reference-n", "3000"],
    );
    assert!(out.contains("variance"));
    let d = dir.path();
    let logliks: Vec<LoglikRow> = read_rows(&d.join("loglik.csv")).unwrap();
    assert_eq!(logliks.len(), 2 * 2 * 2 * 5);
    assert_eq!(duplicate_key(&logliks, |r| (r.method.clone(), r.n, r.len, r.replicate)), None);
    let variances: Vec<VarianceRow> = read_rows(&d.join("variance.csv")).unwrap();
    assert_eq!(variances.len(), 8);
    assert_eq!(duplicate_key(&variances, |r| (r.method.clone(), r.n, r.len)), None);
    let ess: Vec<EssRow> = read_rows(&d.join("ess.csv")).unwrap();
    assert_eq!(ess.len(), 2 * 2 * (30 + 45));
    assert_eq!(duplicate_key(&ess, |r| (r.method.clone(), r.n, r.len, r.t)), None);
    let filt: Vec<FilteringRow> = read_rows(&d.join("filtering.csv")).unwrap();
    assert_eq!(duplicate_key(&filt, |r| (r.method.clone(), r.n, r.len, r.t)), None);

    let plots = ["loglik_T30.svg", "ess_T45.svg", "filtering_T30.svg", "loglik_T45.dat", "ess_T30.dat"];
    let before: Vec<Vec<u8>> = plots.iter().map(|p| std::fs::read(d.join(p)).unwrap()).collect();
    for p in plots {
        std::fs::remove_file(d.join(p)).unwrap();
    }
    render_pf_plots(d).unwrap();
    let after: Vec<Vec<u8>> = plots.iter().map(|p| std::fs::read(d.join(p)).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn inla_fit_and_pmmh_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--length", "40"]);
    let data = d.join("data.csv");
    let fit_dir = d.join("fit");
    ok(&fit_dir, &["inla-fit", "--data", data.to_str().unwrap()]);
    for name in ["rho", "sigma", "alpha"] {
        let text = std::fs::read_to_string(fit_dir.join(format!("theta_{name}_marginal.csv"))).unwrap();
        assert!(text.starts_with("value,density\n"));
    }
    let latent: Vec<LatentRow> = read_rows(&fit_dir.join("latent.csv")).unwrap();
    assert_eq!(latent.len(), 40);
    assert!(std::fs::read_to_string(fit_dir.join("report.txt")).unwrap().contains("hessian fallback"));

    let pmmh_dir = d.join("pmmh");
    ok(
        &pmmh_dir,
        &["pmmh", "--data", data.to_str().unwrap(), "--iterations", "200", "--burn-in", "20", "--thin", "2", "--pmmh-particles", "30"],
    );
    let chain = std::fs::read_to_string(pmmh_dir.join("chain.csv")).unwrap();
    assert!(chain.starts_with("iteration,rho,sigma,alpha,loglik,accepted\n"));
    assert_eq!(chain.lines().count(), 201);
    let summary = std::fs::read_to_string(pmmh_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    for name in ["rho", "sigma", "alpha"] {
        assert!(pmmh_dir.join(format!("hist_{name}.csv")).exists());
        assert!(pmmh_dir.join(format!("posterior_{name}.svg")).exists());
    }

    let o = run(&pmmh_dir, &["pmmh", "--data", data.to_str().unwrap(), "--iterations", "10", "--burn-in", "10"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn quick_full_study_reports_every_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let first = run(d, &["--quick", "full-study"]);
    assert!(matches!(first.status.code(), Some(0) | Some(3)), "{}", String::from_utf8_lossy(&first.stderr));
    let report = std::fs::read_to_string(d.join("report.txt")).unwrap();
    for id in 1..=10 {
        assert!(report.lines().any(|l| (l.starts_with("[PASS]") || l.starts_with("[FAIL]")) && l[6..].trim_start().starts_with(&format!("{id} "))), "criterion {id} missing:\n{report}");
    }
    let failed = report.lines().filter(|l| l.starts_with("[FAIL]")).count();
    assert_eq!(first.status.code(), Some(if failed == 0 { 0 } else { 3 }));

    std::fs::remove_file(d.join("pf").join("ess.csv")).unwrap();
    std::fs::remove_file(d.join("data").join("data.csv")).unwrap();
    let second = run(d, &["--quick", "full-study"]);
    assert_eq!(second.status.code(), first.status.code());
    assert!(d.join("pf").join("ess.csv").exists());
    assert!(d.join("data").join("data.csv").exists());
}
