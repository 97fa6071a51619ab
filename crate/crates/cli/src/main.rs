//! `adadelay` command-line driver.
//!
//! Exit status: 0 on success, 2 for an invalid config or malformed input,
//! 1 for any other failure. `ADADELAY_OUTPUT_ROOT` replaces the `output_dir`
//! of every config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adadelay::experiment::{
    compute_auc, diagnose, export_trace, ratefit, run_experiment, simulate_config, ExperimentConfig,
};
use adadelay::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adadelay", version, about = "Delay-sensitive asynchronous SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (policy, alpha0, T, seed) cell of a config.
    Run { config: PathBuf },
    /// Recompute the residual and bound report for a finished run directory.
    Diagnose { run_dir: PathBuf },
    /// Fit log-log convergence slopes from a summary.csv.
    Ratefit { summary: PathBuf },
    /// Run the parameter-server simulator once and write its delay artifacts.
    Simulate { config: PathBuf },
    /// Extract the delay column of a run CSV as a replayable trace.
    TraceExport { run_csv: PathBuf, output: PathBuf },
    /// Area under the ROC curve of scores against 0/1 labels, one value per line.
    Auc { scores: PathBuf, labels: PathBuf },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Parse { .. } => 2,
        _ => 1,
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Error> {
    let cfg = ExperimentConfig::load(path).map_err(|e| match e {
        Error::Io { path, source } => Error::Config {
            key: "config".into(),
            reason: format!("cannot read {}: {source}", path.display()),
        },
        other => other,
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn read_column(path: &Path) -> Result<Vec<f64>, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        values.push(line.parse::<f64>().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(values)
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let out = run_experiment(&cfg)?;
            println!("policy,alpha0,steps,seeds,mean_final_gap,stderr_final_gap,mean_avg_gap,mean_auc,best");
            for r in &out.summary {
                let auc = r.mean_auc.map(|a| format!("{a:.6}")).unwrap_or_default();
                println!(
                    "{},{},{},{},{:.6e},{:.3e},{:.6e},{auc},{}",
                    r.policy, r.alpha0, r.steps, r.seeds, r.mean_final_gap, r.stderr_final_gap, r.mean_avg_gap, r.best
                );
            }
            eprintln!("wrote {}", out.dir.display());
        }
        Command::Diagnose { run_dir } => {
            let report = diagnose(&run_dir)?;
            println!("steps {} seeds {} c {} beta {}", report.steps, report.seeds, report.c, report.beta);
            println!("identity max relative error {:.3e}", report.identity_max_rel_error);
            println!("seeds violating the summed decomposition {}", report.sum_violations);
            let crossed = report.cross_term.iter().filter(|c| !c.pass).count();
            println!("cross term outside 4 stderr at {crossed} of {} steps", report.cross_term.len());
            let r = &report.regret;
            println!(
                "regret {:.4} ± {:.4} vs bound {:.4}: {}",
                r.empirical,
                r.stderr,
                r.bound,
                if r.pass { "ok" } else { "violated" }
            );
            match &report.lemmas {
                Some(lemmas) => {
                    for c in &lemmas.checks {
                        println!(
                            "{} {:.4} ± {:.4} vs bound {:.4}: {}",
                            c.name,
                            c.empirical,
                            c.stderr,
                            c.bound,
                            if c.pass { "ok" } else { "violated" }
                        );
                    }
                }
                None => println!("lemma checks skipped: fewer than 50 seeds"),
            }
            eprintln!("wrote {}", run_dir.join("diagnostics.json").display());
        }
        Command::Ratefit { summary } => {
            println!("policy,alpha0,points,slope,ci_low,ci_high");
            for f in ratefit(&summary)? {
                println!(
                    "{},{},{},{:.4},{:.4},{:.4}",
                    f.policy, f.alpha0, f.points, f.slope, f.ci_low, f.ci_high
                );
            }
        }
        Command::Simulate { config } => {
            let cfg = load_config(&config)?;
            let report = simulate_config(&cfg)?;
            let s = &report.stats;
            println!("workers {}", report.workers.len());
            println!("delays {} mean {:.4} std {:.4}", s.count, s.mean, s.variance().max(0.0).sqrt());
            if let Some(mode) = s.mode() {
                println!("mode {mode}");
            }
            if let Some(theta) = s.theta_hat {
                println!("early growth slope {theta:.4}");
            }
            eprintln!("wrote {}", report.dir.display());
        }
        Command::TraceExport { run_csv, output } => {
            let n = export_trace(&run_csv, &output)?;
            eprintln!("wrote {n} delays to {}", output.display());
        }
        Command::Auc { scores, labels } => {
            let auc = compute_auc(&read_column(&scores)?, &read_column(&labels)?).map_err(|e| Error::Config {
                key: "auc input".into(),
                reason: e.to_string(),
            })?;
            println!("{auc}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_skip_blanks_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        std::fs::write(&path, "# header\n1.5\n\n-2\n").unwrap();
        assert_eq!(read_column(&path).unwrap(), vec![1.5, -2.0]);
        std::fs::write(&path, "1\nx\n").unwrap();
        assert!(matches!(read_column(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn config_and_parse_errors_map_to_2() {
        let config = Error::Config {
            key: "k".into(),
            reason: "r".into(),
        };
        assert_eq!(exit_code(&config), 2);
        assert_eq!(exit_code(&Error::NoUpdates), 1);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
