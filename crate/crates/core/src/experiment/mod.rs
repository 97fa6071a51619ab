//! Experiment orchestration: alpha0 grid search over policies, horizons and
//! seeds, aggregation, plot data, residual diagnostics and rate fits.
//!
//! Output layout under [`ExperimentConfig::resolved_output_dir`]:
//!
//! - `config.txt`: canonical configuration
//! - `experiment.json`: reference optimum and run seeds
//! - `runs/<policy>_a<alpha index>_T<steps>_s<seed index>.{csv,json}`
//! - `outcomes.csv`: one row per run
//! - `summary.csv`: one row per (policy, alpha0, T) with the best alpha0 flagged
//! - `plot_*.csv`: plot series
//! - `diagnostics.json`: when enabled

pub mod config;
pub mod metrics;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    DelayConfig, ExperimentConfig, ProblemConfig, Selection, SimulatorConfig, DEFAULT_ALPHA0_GRID,
    OUTPUT_ROOT_ENV,
};
pub use metrics::compute_auc;

use crate::delay::{delay_stats, write_trace, DelayModelSpec, DelayStats};
use crate::diagnostics::{
    check_lemma_bounds, compute_residuals, fit_rate, gap_identity, mean_stderr, theorem_bound, LemmaReport,
    OffsetFamily, RateFit, RatePoint, ResidualRow, MIN_SEEDS,
};
use crate::engine::{run, write_run, EngineConfig, Problem, RunOutput};
use crate::error::{Error, Result};
use crate::problems::{
    estimate_fstar, make_sparse_logistic, make_synthetic_with, read_libsvm, DataObjective, Dataset, Objective,
    ProjectionSet, SyntheticSpec,
};
use crate::seed::{derive_seed, stream_rng, Stream};
use crate::simulator::{
    inject_stragglers, simulate, uniform_workers, write_event_log, SimOptions, WorkerSpec,
};
use crate::stepsize::{PolicyKind, PolicySpec};

/// Iteration budget and tolerance of the reference-optimum solver.
const FSTAR_BUDGET: usize = 50_000;
const FSTAR_TOL: f64 = 1e-9;

/// A problem instance plus the optional held-out set used for AUC.
#[derive(Clone, Debug)]
pub struct BuiltProblem {
    pub problem: Problem,
    pub test: Option<Arc<Dataset>>,
    /// Whether the reference optimum came from a converged solve (always
    /// true for closed-form optima).
    pub f_star_converged: bool,
}

fn data_problem(train: Dataset, l2: f64) -> (Problem, bool) {
    let objective = Objective::Logistic(DataObjective {
        data: Arc::new(train),
        l2,
    });
    let projection = ProjectionSet::Unconstrained;
    let est = estimate_fstar(&objective, &projection, FSTAR_BUDGET, FSTAR_TOL);
    let dim = objective.dim();
    (
        Problem {
            objective,
            projection,
            x0: vec![0.0; dim],
            f_star: Some(est.value),
            x_star: None,
            constants: None,
        },
        est.converged,
    )
}

pub fn build_problem(cfg: &ProblemConfig) -> Result<BuiltProblem> {
    match cfg {
        ProblemConfig::Quadratic {
            dim,
            sigma,
            radius,
            placement,
            seed,
        } => {
            let s = make_synthetic_with(&SyntheticSpec {
                dim: *dim,
                sigma: *sigma,
                radius: *radius,
                placement: *placement,
                seed: *seed,
            })?;
            Ok(BuiltProblem {
                problem: Problem::from(&s),
                test: None,
                f_star_converged: true,
            })
        }
        ProblemConfig::Logistic { spec, test_examples, l2 } => {
            // One planted model generates both splits.
            let mut all = make_sparse_logistic(&crate::problems::SparseLogisticSpec {
                examples: spec.examples + test_examples,
                ..spec.clone()
            })?;
            let test_rows = all.examples.split_off(spec.examples);
            let test = (*test_examples > 0).then(|| Arc::new(Dataset::new(test_rows, all.dim).expect("same dim")));
            let (problem, converged) = data_problem(all, *l2);
            Ok(BuiltProblem {
                problem,
                test,
                f_star_converged: converged,
            })
        }
        ProblemConfig::Libsvm { train, test, base, l2 } => {
            let train_h = read_libsvm(train, *base)?;
            let test_h = test.as_ref().map(|p| read_libsvm(p, *base)).transpose()?;
            let dim = train_h.dim().max(test_h.as_ref().map_or(0, |h| h.dim()));
            let train_data = Dataset::new(train_h.load()?.examples, dim)?;
            let test_data = match test_h {
                Some(h) => Some(Arc::new(Dataset::new(h.load()?.examples, dim)?)),
                None => None,
            };
            let (problem, converged) = data_problem(train_data, *l2);
            Ok(BuiltProblem {
                problem,
                test: test_data,
                f_star_converged: converged,
            })
        }
    }
}

/// Linear scores `<x, features>` of every example.
pub fn scores(data: &Dataset, x: &[f64]) -> Vec<f64> {
    data.examples
        .iter()
        .map(|e| e.features.iter().map(|(i, v)| v * x.get(i as usize).copied().unwrap_or(0.0)).sum())
        .collect()
}

/// Seed of run `index` under `master`.
pub fn run_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, index as u64)
}

/// Workers of one simulated run, with stragglers drawn from the run seed.
pub fn simulator_workers(sim: &SimulatorConfig, batch_size: usize, seed: u64) -> Result<Vec<WorkerSpec>> {
    let base = uniform_workers(sim.workers, sim.read_time, sim.service_time, batch_size);
    if sim.straggler_fraction == 0.0 {
        return Ok(base);
    }
    let mut rng = stream_rng(seed, Stream::Stragglers);
    inject_stragglers(&base, sim.straggler_fraction, &sim.straggler_factors, &mut rng)
}

/// Run one configured (policy, alpha0, T, seed) cell. Simulated runs also
/// return their delay statistics.
pub fn run_single(
    cfg: &ExperimentConfig,
    problem: &Problem,
    model: Option<&DelayModelSpec>,
    kind: PolicyKind,
    alpha0: f64,
    steps: u64,
    seed: u64,
) -> Result<(RunOutput, Option<DelayStats>)> {
    let policy = PolicySpec {
        kind,
        lipschitz: cfg.lipschitz,
        alpha0,
    };
    match (&cfg.delay, model) {
        (DelayConfig::Simulator(sim), _) => {
            let workers = simulator_workers(sim, cfg.batch_size, seed)?;
            let engine = EngineConfig::new(steps, seed, policy, DelayModelSpec::Induced);
            let opts = SimOptions {
                record_events: false,
                early_fraction: sim.early_fraction,
            };
            let out = simulate(&workers, problem, &engine, &opts)?;
            Ok((out.run, out.stats))
        }
        (_, Some(model)) => {
            let mut engine = EngineConfig::new(steps, seed, policy, model.clone());
            engine.batch_size = cfg.batch_size;
            Ok((run(problem, &engine)?, None))
        }
        (_, None) => Err(Error::invalid("delay", "sampled delay model missing")),
    }
}

/// Result of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub policy: String,
    pub alpha0: f64,
    pub steps: u64,
    pub seed_index: usize,
    pub seed: u64,
    pub final_gap: f64,
    pub averaged_gap: f64,
    pub auc: Option<f64>,
    pub mean_delay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub alpha0: f64,
    pub steps: u64,
    pub seeds: usize,
    pub mean_final_gap: f64,
    pub stderr_final_gap: f64,
    pub median_final_gap: f64,
    pub mean_avg_gap: f64,
    pub stderr_avg_gap: f64,
    pub mean_auc: Option<f64>,
    pub stderr_auc: Option<f64>,
    /// Best alpha0 for this (policy, T).
    pub best: bool,
}

const SUMMARY_HEADER: [&str; 12] = [
    "policy",
    "alpha0",
    "steps",
    "seeds",
    "mean_final_gap",
    "stderr_final_gap",
    "median_final_gap",
    "mean_avg_gap",
    "stderr_avg_gap",
    "mean_auc",
    "stderr_auc",
    "best",
];

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub outcomes: Vec<Outcome>,
    pub summary: Vec<SummaryRow>,
    pub diagnostics: Option<DiagnosticsReport>,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    policy: &'a PolicySpec,
    steps: u64,
    seed_index: usize,
    delay: &'a DelayConfig,
    batch_size: usize,
}

#[derive(Serialize)]
struct ExperimentMeta<'a> {
    config: &'a ExperimentConfig,
    config_hash: String,
    f_star: Option<f64>,
    f_star_converged: bool,
    run_seeds: Vec<u64>,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Aggregate outcomes per (policy, alpha0, T) in first-appearance order and
/// flag the best alpha0 per (policy, T): smallest mean final gap, or largest
/// mean AUC, with ties going to the smaller alpha0.
pub fn summarize(outcomes: &[Outcome], select_by: Selection) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, u64, u64)> = Vec::new();
    for o in outcomes {
        let k = (o.policy.clone(), o.alpha0.to_bits(), o.steps);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut rows: Vec<SummaryRow> = keys
        .iter()
        .map(|(policy, alpha_bits, steps)| {
            let group: Vec<&Outcome> = outcomes
                .iter()
                .filter(|o| &o.policy == policy && o.alpha0.to_bits() == *alpha_bits && o.steps == *steps)
                .collect();
            let finals: Vec<f64> = group.iter().map(|o| o.final_gap).collect();
            let avgs: Vec<f64> = group.iter().map(|o| o.averaged_gap).collect();
            let aucs: Option<Vec<f64>> = group.iter().map(|o| o.auc).collect();
            let (mean_final_gap, stderr_final_gap) = mean_stderr(&finals);
            let (mean_avg_gap, stderr_avg_gap) = mean_stderr(&avgs);
            let auc = aucs.map(|a| mean_stderr(&a));
            SummaryRow {
                policy: policy.clone(),
                alpha0: f64::from_bits(*alpha_bits),
                steps: *steps,
                seeds: group.len(),
                mean_final_gap,
                stderr_final_gap,
                median_final_gap: median(&mut finals.clone()),
                mean_avg_gap,
                stderr_avg_gap,
                mean_auc: auc.map(|a| a.0),
                stderr_auc: auc.map(|a| a.1),
                best: false,
            }
        })
        .collect();
    mark_best(&mut rows, select_by);
    rows
}

fn mark_best(rows: &mut [SummaryRow], select_by: Selection) {
    let mut groups: Vec<(String, u64)> = Vec::new();
    for r in rows.iter() {
        let k = (r.policy.clone(), r.steps);
        if !groups.contains(&k) {
            groups.push(k);
        }
    }
    for (policy, steps) in groups {
        let mut idx: Vec<usize> = (0..rows.len())
            .filter(|&i| rows[i].policy == policy && rows[i].steps == steps)
            .collect();
        idx.sort_by(|&a, &b| rows[a].alpha0.total_cmp(&rows[b].alpha0));
        // Larger is better after the sign flip; NaN never wins.
        let score = |r: &SummaryRow| match (select_by, r.mean_auc) {
            (Selection::Auc, Some(a)) => a,
            _ => -r.mean_final_gap,
        };
        let mut best: Option<usize> = None;
        for i in idx {
            let s = score(&rows[i]);
            if s.is_nan() {
                continue;
            }
            if best.is_none_or(|b| s > score(&rows[b])) {
                best = Some(i);
            }
        }
        if let Some(b) = best {
            rows[b].best = true;
        }
    }
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>()?;
    Ok(rows)
}

fn write_outcomes(path: &Path, outcomes: &[Outcome]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record([
        "policy",
        "alpha0",
        "steps",
        "seed_index",
        "seed",
        "final_gap",
        "averaged_gap",
        "auc",
        "mean_delay",
    ])?;
    for o in outcomes {
        w.serialize(o)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_outcomes(path: &Path) -> Result<Vec<Outcome>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<Outcome>, _>>()?;
    Ok(rows)
}

fn write_csv_rows<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct GapSeriesRow<'a> {
    policy: &'a str,
    steps: u64,
    alpha0: f64,
    mean_final_gap: f64,
    stderr_final_gap: f64,
    mean_avg_gap: f64,
    stderr_avg_gap: f64,
}

#[derive(Serialize)]
struct AucSeriesRow<'a> {
    policy: &'a str,
    steps: u64,
    alpha0: f64,
    mean_auc: Option<f64>,
    stderr_auc: Option<f64>,
}

/// Write the plot series into `dir`:
///
/// - `plot_gap_vs_steps.csv`: best alpha0 per (policy, T); gap against T.
/// - `plot_gap_vs_alpha0.csv`: every row; gap against alpha0.
/// - `plot_auc_vs_steps.csv`: best alpha0 per (policy, T); AUC against T.
///
/// Each file has one series per policy, keyed by the `policy` column.
pub fn emit_plots_data(summary: &[SummaryRow], dir: &Path) -> Result<Vec<PathBuf>> {
    let gap_header = [
        "policy",
        "steps",
        "alpha0",
        "mean_final_gap",
        "stderr_final_gap",
        "mean_avg_gap",
        "stderr_avg_gap",
    ];
    fn gap_row(r: &SummaryRow) -> GapSeriesRow<'_> {
        GapSeriesRow {
        policy: &r.policy,
        steps: r.steps,
        alpha0: r.alpha0,
        mean_final_gap: r.mean_final_gap,
        stderr_final_gap: r.stderr_final_gap,
        mean_avg_gap: r.mean_avg_gap,
        stderr_avg_gap: r.stderr_avg_gap,
        }
    }
    let mut best: Vec<&SummaryRow> = summary.iter().filter(|r| r.best).collect();
    best.sort_by(|a, b| a.policy.cmp(&b.policy).then(a.steps.cmp(&b.steps)));
    let mut all: Vec<&SummaryRow> = summary.iter().collect();
    all.sort_by(|a, b| {
        a.policy
            .cmp(&b.policy)
            .then(a.steps.cmp(&b.steps))
            .then(a.alpha0.total_cmp(&b.alpha0))
    });

    let paths = [
        dir.join("plot_gap_vs_steps.csv"),
        dir.join("plot_gap_vs_alpha0.csv"),
        dir.join("plot_auc_vs_steps.csv"),
    ];
    let best_gaps: Vec<GapSeriesRow> = best.iter().map(|r| gap_row(r)).collect();
    write_csv_rows(&paths[0], &gap_header, &best_gaps)?;
    let all_gaps: Vec<GapSeriesRow> = all.iter().map(|r| gap_row(r)).collect();
    write_csv_rows(&paths[1], &gap_header, &all_gaps)?;
    let aucs: Vec<AucSeriesRow> = best
        .iter()
        .map(|r| AucSeriesRow {
            policy: &r.policy,
            steps: r.steps,
            alpha0: r.alpha0,
            mean_auc: r.mean_auc,
            stderr_auc: r.stderr_auc,
        })
        .collect();
    write_csv_rows(&paths[2], &["policy", "steps", "alpha0", "mean_auc", "stderr_auc"], &aucs)?;
    Ok(paths.to_vec())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(feature = "parallel")]
fn map_jobs<J: Sync, R: Send>(parallelism: usize, jobs: &[J], f: impl Fn(&J) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(&f).collect())
}

#[cfg(not(feature = "parallel"))]
fn map_jobs<J, R>(_parallelism: usize, jobs: &[J], f: impl Fn(&J) -> Result<R>) -> Result<Vec<R>> {
    jobs.iter().map(f).collect()
}

struct Job {
    policy: usize,
    alpha: usize,
    steps: u64,
    seed_index: usize,
}

/// Run every (policy, alpha0, T, seed) cell and write all artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let dir = cfg.resolved_output_dir();
    let runs_dir = dir.join("runs");
    create_dir(&dir)?;
    if cfg.write_runs {
        create_dir(&runs_dir)?;
    }
    write_text(&dir.join("config.txt"), &cfg.to_text())?;
    let built = build_problem(&cfg.problem)?;
    let model = cfg.delay.model()?;
    let seeds: Vec<u64> = (0..cfg.seeds).map(|i| run_seed(cfg.master_seed, i)).collect();
    let meta = ExperimentMeta {
        config: cfg,
        config_hash: crate::engine::config_hash(cfg),
        f_star: built.problem.f_star,
        f_star_converged: built.f_star_converged,
        run_seeds: seeds.clone(),
    };
    write_text(&dir.join("experiment.json"), &serde_json::to_string_pretty(&meta)?)?;

    let mut jobs = Vec::new();
    for policy in 0..cfg.policies.len() {
        for alpha in 0..cfg.alpha0.len() {
            for &steps in &cfg.steps {
                for seed_index in 0..cfg.seeds {
                    jobs.push(Job {
                        policy,
                        alpha,
                        steps,
                        seed_index,
                    });
                }
            }
        }
    }
    let outcomes = map_jobs(cfg.parallelism, &jobs, |job| {
        let kind = cfg.policies[job.policy];
        let alpha0 = cfg.alpha0[job.alpha];
        let seed = seeds[job.seed_index];
        let (out, _) = run_single(cfg, &built.problem, model.as_ref(), kind, alpha0, job.steps, seed)?;
        let record = &out.record;
        let auc = match &built.test {
            Some(test) => Some(compute_auc(
                &scores(test, &record.final_iterate),
                &test.examples.iter().map(|e| e.label).collect::<Vec<_>>(),
            )?),
            None => None,
        };
        if cfg.write_runs {
            let stem = format!("{}_a{}_T{}_s{}", kind.name(), job.alpha, job.steps, job.seed_index);
            let run_meta = RunMeta {
                policy: &PolicySpec {
                    kind,
                    lipschitz: cfg.lipschitz,
                    alpha0,
                },
                steps: job.steps,
                seed_index: job.seed_index,
                delay: &cfg.delay,
                batch_size: cfg.batch_size,
            };
            write_run(&runs_dir, &stem, record, &run_meta)?;
        }
        let taus = record.taus();
        Ok(Outcome {
            policy: kind.name().to_string(),
            alpha0,
            steps: job.steps,
            seed_index: job.seed_index,
            seed,
            final_gap: record.final_gap.unwrap_or(f64::NAN),
            averaged_gap: record.averaged_gap.unwrap_or(f64::NAN),
            auc,
            mean_delay: taus.iter().sum::<u64>() as f64 / taus.len().max(1) as f64,
        })
    })?;

    let summary = summarize(&outcomes, cfg.select_by);
    write_outcomes(&dir.join("outcomes.csv"), &outcomes)?;
    write_summary(&dir.join("summary.csv"), &summary)?;
    emit_plots_data(&summary, &dir)?;
    let diagnostics = if cfg.diagnostics {
        let report = run_diagnostics(cfg, &built.problem)?;
        write_text(&dir.join("diagnostics.json"), &serde_json::to_string_pretty(&report)?)?;
        Some(report)
    } else {
        None
    };
    Ok(ExperimentOutput {
        dir,
        outcomes,
        summary,
        diagnostics,
    })
}

/// Mean of the cross term at one step over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossTermCheck {
    pub t: u64,
    pub mean: f64,
    pub stderr: f64,
    /// `|mean| <= 4 stderr`.
    pub pass: bool,
}

/// Expected regret against its closed-form bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretCheck {
    pub steps: u64,
    pub empirical: f64,
    pub stderr: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub steps: u64,
    pub seeds: usize,
    pub c: f64,
    pub beta: f64,
    /// Largest relative error of the exact per-step decomposition.
    pub identity_max_rel_error: f64,
    /// Seeds whose summed gap exceeded the summed decomposition bound.
    pub sum_violations: usize,
    pub cross_term: Vec<CrossTermCheck>,
    pub regret: RegretCheck,
    /// Present when at least [`MIN_SEEDS`] seeds were run.
    pub lemmas: Option<LemmaReport>,
}

/// Residual rows of many seeded scalar-AdaDelay runs with `alpha0 = 1`.
pub fn residual_series(
    problem: &Problem,
    model: &DelayModelSpec,
    family: OffsetFamily,
    lipschitz: f64,
    steps: u64,
    seeds: &[u64],
) -> Result<Vec<(Vec<ResidualRow>, f64)>> {
    let job = |&seed: &u64| -> Result<(Vec<ResidualRow>, f64)> {
        let policy = PolicySpec {
            kind: PolicyKind::AdaDelay {
                c: family.c,
                beta: family.beta,
            },
            lipschitz,
            alpha0: 1.0,
        };
        let mut engine = EngineConfig::new(steps, seed, policy, model.clone());
        engine.record_trajectory = true;
        let out = run(problem, &engine)?;
        let trajectory = out.trajectory.as_ref().expect("requested");
        let rows = compute_residuals(&out.record, trajectory, problem)?;
        let mut max_err: f64 = 0.0;
        if matches!(problem.objective, Objective::Quadratic(_)) {
            for r in gap_identity(&out.record, trajectory, problem, lipschitz)? {
                max_err = max_err.max(r.identity_error() / r.first_line.abs().max(1.0));
            }
        }
        Ok((rows, max_err))
    };
    map_jobs(0, seeds, job)
}

/// Residual decomposition, cross-term, regret and lemma checks for the
/// scalar AdaDelay policy of `cfg` (or `c = 1, beta = 1/2`) with `alpha0 = 1`
/// at the largest horizon.
pub fn run_diagnostics(cfg: &ExperimentConfig, problem: &Problem) -> Result<DiagnosticsReport> {
    let constants = problem
        .constants
        .ok_or_else(|| Error::Unsupported("diagnostics need a synthetic problem with known constants".into()))?;
    let model = match cfg.delay.model()? {
        Some(m @ (DelayModelSpec::Uniform { .. } | DelayModelSpec::Scaled { .. })) => m,
        _ => return Err(Error::Unsupported("diagnostics need uniform or scaled delays".into())),
    };
    let family = cfg
        .policies
        .iter()
        .find_map(|p| match *p {
            PolicyKind::AdaDelay { c, beta } => Some(OffsetFamily { c, beta }),
            _ => None,
        })
        .unwrap_or(OffsetFamily { c: 1.0, beta: 0.5 });
    let steps = *cfg.steps.iter().max().expect("validated nonempty");
    let seeds: Vec<u64> = (0..cfg.seeds).map(|i| run_seed(cfg.master_seed, i)).collect();
    let runs = residual_series(problem, &model, family, cfg.lipschitz, steps, &seeds)?;

    let identity_max_rel_error = runs.iter().map(|r| r.1).fold(0.0, f64::max);
    let sum_violations = runs
        .iter()
        .filter(|(rows, _)| {
            let gap: f64 = rows.iter().map(|r| r.gap).sum();
            let rhs: f64 = rows.iter().map(|r| r.delta + r.gamma + r.zeta + r.sigma_term).sum();
            gap > rhs + 1e-9 * rhs.abs().max(1.0)
        })
        .count();
    let cross_term = (1..=10u64)
        .map(|k| ((k * steps) / 10).max(1))
        .map(|t| {
            let vals: Vec<f64> = runs.iter().map(|(rows, _)| rows[t as usize - 1].zeta).collect();
            let (mean, stderr) = mean_stderr(&vals);
            CrossTermCheck {
                t,
                mean,
                stderr,
                pass: mean.abs() <= 4.0 * stderr,
            }
        })
        .collect();
    let regrets: Vec<f64> = runs.iter().map(|(rows, _)| rows.iter().map(|r| r.gap).sum()).collect();
    let (empirical, stderr) = mean_stderr(&regrets);
    let bound = theorem_bound(&constants, &model, family.c, steps)?;
    let regret = RegretCheck {
        steps,
        empirical,
        stderr,
        bound,
        pass: empirical <= bound + 3.0 * stderr,
    };
    let lemmas = if seeds.len() >= MIN_SEEDS {
        let series: Vec<Vec<ResidualRow>> = runs.into_iter().map(|r| r.0).collect();
        Some(check_lemma_bounds(&series, Some(&constants), &model, family)?)
    } else {
        None
    };
    Ok(DiagnosticsReport {
        steps,
        seeds: seeds.len(),
        c: family.c,
        beta: family.beta,
        identity_max_rel_error,
        sum_violations,
        cross_term,
        regret,
        lemmas,
    })
}

/// Re-run the diagnostics of an experiment directory from its `config.txt`
/// and write `diagnostics.json` there.
pub fn diagnose(dir: &Path) -> Result<DiagnosticsReport> {
    let cfg = ExperimentConfig::load(&dir.join("config.txt"))?;
    let built = build_problem(&cfg.problem)?;
    let report = run_diagnostics(&cfg, &built.problem)?;
    write_text(&dir.join("diagnostics.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFitRow {
    pub policy: String,
    pub alpha0: f64,
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Log-log slope of the mean averaged-iterate gap against T for every
/// (policy, alpha0) series with at least three horizons; writes
/// `ratefit.csv` next to the summary.
pub fn ratefit(summary_path: &Path) -> Result<Vec<RateFitRow>> {
    let rows = read_summary(summary_path)?;
    let mut keys: Vec<(String, u64)> = Vec::new();
    for r in &rows {
        let k = (r.policy.clone(), r.alpha0.to_bits());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut fits = Vec::new();
    for (policy, bits) in keys {
        let points: Vec<RatePoint> = rows
            .iter()
            .filter(|r| r.policy == policy && r.alpha0.to_bits() == bits)
            .map(|r| RatePoint {
                steps: r.steps,
                mean: r.mean_avg_gap,
                stderr: r.stderr_avg_gap,
            })
            .collect();
        if points.len() < 3 {
            continue;
        }
        let RateFit {
            slope,
            intercept,
            ci_low,
            ci_high,
        } = fit_rate(&points, 1000, 0)?;
        fits.push(RateFitRow {
            policy,
            alpha0: f64::from_bits(bits),
            points: points.len(),
            slope,
            intercept,
            ci_low,
            ci_high,
        });
    }
    if fits.is_empty() {
        return Err(Error::invalid("summary", "no (policy, alpha0) series has three horizons"));
    }
    let out = summary_path.with_file_name("ratefit.csv");
    write_csv_rows(
        &out,
        &["policy", "alpha0", "points", "slope", "intercept", "ci_low", "ci_high"],
        &fits,
    )?;
    Ok(fits)
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulationReport {
    pub dir: PathBuf,
    pub stats: DelayStats,
    pub workers: Vec<WorkerSpec>,
}

/// Simulate the first (policy, alpha0, T) cell of a simulator config with
/// seed index 0 and write `delays.txt`, `delay_histogram.csv`,
/// `delay_stats.json` and `events.csv`.
pub fn simulate_config(cfg: &ExperimentConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let DelayConfig::Simulator(sim) = &cfg.delay else {
        return Err(Error::Config {
            key: "delay".into(),
            reason: "`simulate` needs `delay = simulator`".into(),
        });
    };
    let dir = cfg.resolved_output_dir();
    create_dir(&dir)?;
    let built = build_problem(&cfg.problem)?;
    let seed = run_seed(cfg.master_seed, 0);
    let workers = simulator_workers(sim, cfg.batch_size, seed)?;
    let engine = EngineConfig::new(
        cfg.steps[0],
        seed,
        PolicySpec {
            kind: cfg.policies[0],
            lipschitz: cfg.lipschitz,
            alpha0: cfg.alpha0[0],
        },
        DelayModelSpec::Induced,
    );
    let opts = SimOptions {
        record_events: true,
        early_fraction: sim.early_fraction,
    };
    let out = simulate(&workers, &built.problem, &engine, &opts)?;
    let taus = out.run.record.taus();
    let stats = delay_stats(&taus, sim.early_fraction)?;
    write_trace(dir.join("delays.txt"), &taus)?;
    let hist: Vec<(u64, u64)> = stats.histogram.iter().map(|(d, c)| (*d, *c)).collect();
    write_csv_rows(&dir.join("delay_histogram.csv"), &["delay", "count"], &hist)?;
    write_text(&dir.join("delay_stats.json"), &serde_json::to_string_pretty(&stats)?)?;
    write_event_log(&dir.join("events.csv"), out.events.as_deref().unwrap_or(&[]))?;
    Ok(SimulationReport { dir, stats, workers })
}

/// Copy the `tau` column of a run CSV into a replayable delay trace and
/// return the number of delays written.
pub fn export_trace(run_csv: &Path, out: &Path) -> Result<usize> {
    #[derive(Deserialize)]
    struct TauRow {
        tau: u64,
    }
    let mut rdr = csv::Reader::from_path(run_csv)?;
    let taus = rdr
        .deserialize()
        .map(|r| r.map(|row: TauRow| row.tau))
        .collect::<std::result::Result<Vec<u64>, _>>()?;
    if taus.is_empty() {
        return Err(Error::Empty("run csv has no rows"));
    }
    write_trace(out, &taus)?;
    Ok(taus.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(policy: &str, alpha0: f64, seed_index: usize, gap: f64) -> Outcome {
        Outcome {
            policy: policy.into(),
            alpha0,
            steps: 10,
            seed_index,
            seed: seed_index as u64,
            final_gap: gap,
            averaged_gap: gap,
            auc: None,
            mean_delay: 0.0,
        }
    }

    #[test]
    fn best_alpha0_tie_goes_to_smaller() {
        let outcomes = vec![
            outcome("a", 0.1, 0, 1.0),
            outcome("a", 0.01, 0, 1.0),
            outcome("a", 1.0, 0, 2.0),
        ];
        let rows = summarize(&outcomes, Selection::Gap);
        let best: Vec<f64> = rows.iter().filter(|r| r.best).map(|r| r.alpha0).collect();
        assert_eq!(best, vec![0.01]);
    }

    #[test]
    fn best_by_auc() {
        let mut outcomes = vec![outcome("a", 0.1, 0, 1.0), outcome("a", 1.0, 0, 0.5)];
        outcomes[0].auc = Some(0.8);
        outcomes[1].auc = Some(0.7);
        let rows = summarize(&outcomes, Selection::Auc);
        assert!(rows[0].best && !rows[1].best);
        let rows = summarize(&outcomes, Selection::Gap);
        assert!(!rows[0].best && rows[1].best);
    }

    #[test]
    fn summary_statistics() {
        let outcomes: Vec<Outcome> = (0..4).map(|i| outcome("p", 1.0, i, i as f64)).collect();
        let rows = summarize(&outcomes, Selection::Gap);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].seeds, 4);
        assert_eq!(rows[0].mean_final_gap, 1.5);
        assert_eq!(rows[0].median_final_gap, 1.5);
        assert!((rows[0].stderr_final_gap - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn summary_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut outcomes: Vec<Outcome> = (0..3).map(|i| outcome("p", 0.5, i, 0.1 * i as f64)).collect();
        outcomes[0].auc = Some(0.5);
        outcomes[1].auc = Some(0.6);
        outcomes[2].auc = Some(0.7);
        let rows = summarize(&outcomes, Selection::Gap);
        let path = dir.path().join("summary.csv");
        write_summary(&path, &rows).unwrap();
        assert_eq!(read_summary(&path).unwrap(), rows);
        write_summary(&path, &[]).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap().trim_end(),
            SUMMARY_HEADER.join(",")
        );
        let opath = dir.path().join("outcomes.csv");
        write_outcomes(&opath, &outcomes).unwrap();
        assert_eq!(read_outcomes(&opath).unwrap(), outcomes);
    }

    #[test]
    fn plot_series() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_plots_data(&[], dir.path()).unwrap();
        for p in &paths {
            assert_eq!(fs::read_to_string(p).unwrap().lines().count(), 1);
        }
        let outcomes: Vec<Outcome> = ["x", "y", "z"]
            .iter()
            .flat_map(|p| [outcome(p, 0.1, 0, 1.0), outcome(p, 1.0, 0, 2.0)])
            .collect();
        let rows = summarize(&outcomes, Selection::Gap);
        let paths = emit_plots_data(&rows, dir.path()).unwrap();
        let steps = fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(steps.lines().count(), 4);
        let alpha = fs::read_to_string(&paths[1]).unwrap();
        assert_eq!(alpha.lines().count(), 7);
        let again = emit_plots_data(&rows, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(&again[1]).unwrap(), alpha);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }
}
