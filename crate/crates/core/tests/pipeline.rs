use adadelay::experiment::{
    diagnose, ratefit, read_outcomes, read_summary, run_experiment, simulate_config, ExperimentConfig,
};
use adadelay::Error;

fn config(dir: &std::path::Path, body: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&format!("{body}\noutput_dir = {}\n", dir.display())).unwrap()
}

#[test]
fn minimal_config_writes_one_record_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "name = minimal\nproblem = quadratic\nsteps = 50\nalpha0 = 0.5\n");
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.outcomes.len(), 1);
    assert_eq!(out.summary.len(), 1);
    assert!(out.summary[0].best);

    let runs: Vec<_> = std::fs::read_dir(out.dir.join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 2, "one csv and one json per run");
    assert_eq!(read_summary(&out.dir.join("summary.csv")).unwrap().len(), 1);
    assert_eq!(read_outcomes(&out.dir.join("outcomes.csv")).unwrap().len(), 1);
    for file in ["config.txt", "experiment.json", "plot_gap_vs_steps.csv", "plot_gap_vs_alpha0.csv"] {
        assert!(out.dir.join(file).is_file(), "{file} missing");
    }
    let saved = ExperimentConfig::load(&out.dir.join("config.txt")).unwrap();
    assert_eq!(saved.to_text(), cfg.to_text());
}

#[test]
fn each_policy_gets_one_best_row_per_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "name = two\nproblem = quadratic\npolicies = adadelay, async_adagrad\nalpha0 = 0.1, 1\nsteps = 20, 40\nseeds = 2\nwrite_runs = false",
    );
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.outcomes.len(), 2 * 2 * 2 * 2);
    assert_eq!(out.summary.len(), 8);
    assert_eq!(out.summary.iter().filter(|r| r.best).count(), 4);
    assert!(!out.dir.join("runs").exists());
}

#[test]
fn reruns_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let body = "name = rep\nproblem = quadratic\ndelay = uniform\ntau_bar = 3\nsteps = 100\nseeds = 3\nwrite_runs = false";
    let x = run_experiment(&config(a.path(), body)).unwrap();
    let y = run_experiment(&config(b.path(), body)).unwrap();
    let read = |d: &std::path::Path| std::fs::read_to_string(d.join("summary.csv")).unwrap();
    assert_eq!(read(&x.dir), read(&y.dir));
}

#[test]
fn ratefit_needs_three_horizons() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "name = fit\nproblem = quadratic\nsigma = 1\nsteps = 100, 1000, 10000\nalpha0 = 1\nseeds = 4\nwrite_runs = false",
    );
    let out = run_experiment(&cfg).unwrap();
    let fits = ratefit(&out.dir.join("summary.csv")).unwrap();
    assert_eq!(fits.len(), 1);
    assert!(fits[0].slope < 0.0);
    assert!(fits[0].ci_low <= fits[0].slope && fits[0].slope <= fits[0].ci_high);
    assert!(out.dir.join("ratefit.csv").is_file());

    let short = tempfile::tempdir().unwrap();
    let cfg = config(short.path(), "name = short\nproblem = quadratic\nsteps = 10, 20\nwrite_runs = false");
    let out = run_experiment(&cfg).unwrap();
    assert!(ratefit(&out.dir.join("summary.csv")).is_err());
}

#[test]
fn diagnose_reads_back_a_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "name = diag\nproblem = quadratic\nsigma = 1\ndelay = uniform\ntau_bar = 2\nsteps = 200\nseeds = 5\nalpha0 = 1\nwrite_runs = false",
    );
    let out = run_experiment(&cfg).unwrap();
    let report = diagnose(&out.dir).unwrap();
    assert_eq!(report.seeds, 5);
    assert!(report.identity_max_rel_error < 1e-9);
    assert_eq!(report.cross_term.len(), 10);
    assert!(report.lemmas.is_none(), "lemma checks need more seeds");
    assert!(out.dir.join("diagnostics.json").is_file());
}

#[test]
fn simulate_writes_delay_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "name = sim\nproblem = quadratic\ndelay = simulator\nworkers = 8\nread_mean = 1\nsteps = 2000",
    );
    let report = simulate_config(&cfg).unwrap();
    assert_eq!(report.workers.len(), 8);
    assert!(report.stats.mean > 0.0);
    for file in ["delays.txt", "delay_histogram.csv", "delay_stats.json", "events.csv"] {
        assert!(report.dir.join(file).is_file(), "{file} missing");
    }
    let delays = std::fs::read_to_string(report.dir.join("delays.txt")).unwrap();
    assert_eq!(delays.lines().count(), 2000);
}

#[test]
fn trace_delays_replay_through_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.txt");
    std::fs::write(&trace, "0\n1\n2\n3\n").unwrap();
    let cfg = config(
        dir.path(),
        &format!("name = trace\nproblem = quadratic\ndelay = trace\ntrace_path = {}\nsteps = 30", trace.display()),
    );
    let out = run_experiment(&cfg).unwrap();
    assert!(out.outcomes[0].mean_delay > 0.0);
}

#[test]
fn bad_configs_are_config_errors() {
    for text in [
        "problem = cubic",
        "steps = 0",
        "steps = 5\npolicies = adadelay, adadelay",
        "steps = 5\ndelay = trace\ntrace_path = /nonexistent/trace.txt",
        "steps = 5\nselect_by = auc",
    ] {
        let err = ExperimentConfig::parse(text).and_then(|c| c.validate().map(|_| c));
        assert!(matches!(err, Err(Error::Config { .. })), "{text:?} gave {err:?}");
    }
}

#[test]
fn exported_trace_matches_the_run_delays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "name = export\nproblem = quadratic\ndelay = uniform\ntau_bar = 4\nsteps = 25\nalpha0 = 1",
    );
    let out = run_experiment(&cfg).unwrap();
    let run_csv = std::fs::read_dir(out.dir.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let trace = dir.path().join("trace.txt");
    assert_eq!(adadelay::experiment::export_trace(&run_csv, &trace).unwrap(), 25);
    let taus = adadelay::delay::replay_trace(&trace).unwrap();
    let column: Vec<u64> = std::fs::read_to_string(&run_csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(taus, column);
}
