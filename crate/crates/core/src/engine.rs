//! Projected delayed-gradient iteration, iterate averaging and the
//! sampled-delay run loop.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::delay::{DelayModelSpec, DelayProcess};
use crate::error::{Error, Result};
use crate::problems::{Objective, ProjectionSet, Synthetic};
use crate::seed::{stream_rng, Stream};
use crate::stepsize::{Offsets, PolicySpec, StepPolicy};
use crate::types::{DelayedGradientMessage, ProblemConstants, RunRecord, StepRow, TimeIndex};
use crate::vector::Vector;

/// An objective with its feasible set, starting point and reference optimum.
#[derive(Clone, Debug)]
pub struct Problem {
    pub objective: Objective,
    pub projection: ProjectionSet,
    pub x0: Vec<f64>,
    /// Reference optimum for gap computations (closed form or estimated).
    pub f_star: Option<f64>,
    pub x_star: Option<Vec<f64>>,
    pub constants: Option<ProblemConstants>,
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn gap(&self, x: &[f64]) -> Option<f64> {
        self.f_star.map(|f| self.objective.full_objective(x) - f)
    }
}

impl From<&Synthetic> for Problem {
    fn from(s: &Synthetic) -> Self {
        Problem {
            objective: s.objective.clone(),
            projection: s.projection.clone(),
            x0: s.x0.clone(),
            f_star: Some(s.f_star),
            x_star: Some(s.x_star.clone()),
            constants: Some(s.constants),
        }
    }
}

#[derive(Clone, Debug)]
struct HistoryEntry {
    x: Vec<f64>,
    snapshot: Option<Vec<f64>>,
}

/// Bounded ring of the most recent iterates `x(t - cap + 1), ..., x(t)`.
#[derive(Clone, Debug)]
struct History {
    capacity: usize,
    entries: VecDeque<HistoryEntry>,
}

impl History {
    fn push(&mut self, x: &[f64], snapshot: Option<Vec<f64>>) {
        let mut entry = if self.entries.len() == self.capacity {
            self.entries.pop_front().expect("capacity is at least 1")
        } else {
            HistoryEntry {
                x: Vec::with_capacity(x.len()),
                snapshot: None,
            }
        };
        entry.x.clear();
        entry.x.extend_from_slice(x);
        entry.snapshot = snapshot;
        self.entries.push_back(entry);
    }

    fn lagged(&self, lag: u64) -> Result<&HistoryEntry> {
        let len = self.entries.len() as u64;
        if lag >= len {
            return Err(Error::HistoryExceeded {
                lag,
                capacity: self.capacity,
            });
        }
        Ok(&self.entries[(len - 1 - lag) as usize])
    }
}

/// Server-side element counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateCounts {
    pub dim: usize,
    /// Elements of all per-feature arrays, weights included.
    pub feature_elements: usize,
}

impl StateCounts {
    /// Per-feature entries; exact when every array has one slot per feature.
    pub fn per_feature(&self) -> f64 {
        self.feature_elements as f64 / self.dim as f64
    }
}

/// Result of one [`ServerState::apply_update`].
#[derive(Clone, Debug, PartialEq)]
pub struct Applied {
    pub row: StepRow,
    pub offsets: Offsets,
}

/// Iterate, averaging accumulator, step-size state and feasible set.
#[derive(Clone, Debug)]
pub struct ServerState {
    x: Vec<f64>,
    /// Index of the current iterate `x(t)`; the next update is applied at `t`.
    t: TimeIndex,
    x_bar_sum: Vec<f64>,
    policy: StepPolicy,
    projection: ProjectionSet,
    history: Option<History>,
}

impl ServerState {
    /// `history_cap` keeps that many recent iterates for lagged reads.
    pub fn new(
        mut x0: Vec<f64>,
        policy: PolicySpec,
        projection: ProjectionSet,
        history_cap: Option<usize>,
    ) -> Result<Self> {
        if let Some(i) = x0.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i as u64 });
        }
        projection.project_in_place(&mut x0);
        let policy = StepPolicy::new(policy, x0.len())?;
        let history = match history_cap {
            Some(0) => return Err(Error::invalid("history_cap", "must be at least 1")),
            Some(capacity) => {
                let mut h = History {
                    capacity,
                    entries: VecDeque::with_capacity(capacity),
                };
                h.push(&x0, policy.pull_snapshot());
                Some(h)
            }
            None => None,
        };
        Ok(Self {
            x_bar_sum: vec![0.0; x0.len()],
            x: x0,
            t: TimeIndex::FIRST,
            policy,
            projection,
            history,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn t(&self) -> TimeIndex {
        self.t
    }

    pub fn updates(&self) -> u64 {
        self.t.get() - 1
    }

    pub fn policy(&self) -> &StepPolicy {
        &self.policy
    }

    pub fn x_bar_sum(&self) -> &[f64] {
        &self.x_bar_sum
    }

    /// Iterate `x(t - lag)` and its policy snapshot, from the history ring.
    pub fn lagged(&self, lag: u64) -> Result<(&[f64], Option<&[f64]>)> {
        let h = self.history.as_ref().ok_or(Error::HistoryExceeded { lag, capacity: 0 })?;
        let e = h.lagged(lag)?;
        Ok((&e.x, e.snapshot.as_deref()))
    }

    pub fn pull_snapshot(&self) -> Option<Vec<f64>> {
        self.policy.pull_snapshot()
    }

    /// Apply `x(t+1) = Π(x(t) - α g)` with `tau = t - computed_at`.
    ///
    /// `snapshot` is the policy snapshot taken when the gradient's iterate was
    /// read; it is only consulted by AdaptiveRevision.
    pub fn apply_update(
        &mut self,
        msg: &DelayedGradientMessage,
        snapshot: Option<&[f64]>,
    ) -> Result<Applied> {
        let t = self.t;
        if msg.computed_at > t {
            return Err(Error::Causality {
                computed_at: msg.computed_at.get(),
                server_t: t.get(),
            });
        }
        let tau = t.get() - msg.computed_at.get();
        let dim = self.x.len();
        if let Vector::Dense(g) = &msg.gradient {
            if g.len() != dim {
                return Err(Error::DimensionMismatch { left: g.len(), right: dim });
            }
        }
        if let Some(max) = msg.gradient.entries().map(|(i, _)| i).last() {
            if max as usize >= dim {
                return Err(Error::IndexOutOfRange { index: max, len: dim });
            }
        }
        let offsets = self.policy.offsets(t, tau, &msg.gradient, snapshot)?;
        let spec = *self.policy.spec();
        match &offsets {
            Offsets::Scalar(eta) => {
                let alpha = spec.alpha(*eta);
                for (j, g) in msg.gradient.entries() {
                    self.x[j as usize] -= alpha * g;
                }
            }
            Offsets::PerEntry(etas) => {
                for ((j, g), eta) in msg.gradient.entries().zip(etas) {
                    self.x[j as usize] -= spec.alpha(*eta) * g;
                }
            }
        }
        self.projection.project_in_place(&mut self.x);
        if let Some(i) = self.x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i as u64 });
        }
        for (s, v) in self.x_bar_sum.iter_mut().zip(&self.x) {
            *s += v;
        }
        self.t = t.next();
        if let Some(h) = &mut self.history {
            h.push(&self.x, self.policy.pull_snapshot());
        }
        let eta = offsets.logged();
        Ok(Applied {
            row: StepRow {
                t: t.get(),
                tau,
                eta,
                alpha: spec.alpha(eta),
                f_gap: None,
            },
            offsets,
        })
    }

    /// `x̄(T) = (1/T) Σ_{t=1}^T x(t+1)`.
    pub fn averaged_iterate(&self) -> Result<Vec<f64>> {
        let n = self.updates();
        if n == 0 {
            return Err(Error::NoUpdates);
        }
        Ok(self.x_bar_sum.iter().map(|s| s / n as f64).collect())
    }

    pub fn element_counts(&self) -> StateCounts {
        let policy: usize = self.policy.feature_arrays().iter().map(|a| a.len()).sum();
        StateCounts {
            dim: self.x.len(),
            feature_elements: self.x.len() + policy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Number of server updates `T`.
    pub steps: u64,
    pub seed: u64,
    pub policy: PolicySpec,
    pub delay: DelayModelSpec,
    pub batch_size: usize,
    /// Ring capacity for lagged reads. Defaults to the model's largest delay
    /// plus one, or 4096 for unbounded models.
    pub history_cap: Option<usize>,
    /// Evaluate `f(x(t+1)) - f*` every this many updates (0 disables).
    pub gap_every: u64,
    /// Update counts at which averaged and last-iterate gaps are recorded.
    pub checkpoints: Vec<u64>,
    /// Keep every iterate and applied gradient for residual diagnostics.
    pub record_trajectory: bool,
}

impl EngineConfig {
    pub fn new(steps: u64, seed: u64, policy: PolicySpec, delay: DelayModelSpec) -> Self {
        Self {
            steps,
            seed,
            policy,
            delay,
            batch_size: 1,
            history_cap: None,
            gap_every: 0,
            checkpoints: Vec::new(),
            record_trajectory: false,
        }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Hex SHA-256 of the JSON form of `value`.
pub fn config_hash(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Gaps after a given number of updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub steps: u64,
    /// `f(x̄(T)) - f*`.
    pub averaged_gap: f64,
    /// `f(x(T+1)) - f*`.
    pub last_gap: f64,
    /// `Σ_{t=1}^T (f(x(t+1)) - f*)`, available when every step was evaluated.
    pub regret: Option<f64>,
}

/// Everything needed to recompute the residuals of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `x(1), ..., x(T+1)`.
    pub iterates: Vec<Vec<f64>>,
    /// Applied gradient of update `t`, densified, at index `t - 1`.
    pub gradients: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub checkpoints: Vec<Checkpoint>,
    pub trajectory: Option<Trajectory>,
    pub delay_clamps: u64,
    pub policy_clamps: u64,
    pub counts: StateCounts,
}

/// Bookkeeping shared by the sampled-delay loop and the simulator.
pub(crate) struct Recorder<'a> {
    problem: &'a Problem,
    gap_every: u64,
    checkpoints: Vec<u64>,
    next_checkpoint: usize,
    rows: Vec<StepRow>,
    regret: f64,
    results: Vec<Checkpoint>,
    trajectory: Option<Trajectory>,
}

impl<'a> Recorder<'a> {
    pub(crate) fn new(problem: &'a Problem, config: &EngineConfig, x0: &[f64]) -> Result<Self> {
        let mut checkpoints = config.checkpoints.clone();
        checkpoints.sort_unstable();
        checkpoints.dedup();
        if checkpoints.iter().any(|&c| c == 0 || c > config.steps) {
            return Err(Error::invalid("checkpoints", "must lie in 1..=steps"));
        }
        if !checkpoints.is_empty() && problem.f_star.is_none() {
            return Err(Error::invalid("checkpoints", "need a reference optimum"));
        }
        Ok(Self {
            problem,
            gap_every: config.gap_every,
            checkpoints,
            next_checkpoint: 0,
            rows: Vec::with_capacity(config.steps.min(1 << 24) as usize),
            regret: 0.0,
            results: Vec::new(),
            trajectory: config.record_trajectory.then(|| Trajectory {
                iterates: vec![x0.to_vec()],
                gradients: Vec::new(),
            }),
        })
    }

    pub(crate) fn record(&mut self, state: &ServerState, mut row: StepRow, grad: &Vector) -> Result<()> {
        let t = row.t;
        if self.gap_every > 0 && t.is_multiple_of(self.gap_every) {
            row.f_gap = self.problem.gap(state.x());
            if let Some(g) = row.f_gap {
                self.regret += g;
            }
        }
        if let Some(tr) = &mut self.trajectory {
            tr.iterates.push(state.x().to_vec());
            tr.gradients.push(grad.to_dense(state.x().len())?);
        }
        if self.checkpoints.get(self.next_checkpoint) == Some(&t) {
            self.next_checkpoint += 1;
            let avg = state.averaged_iterate()?;
            let last_gap = match row.f_gap {
                Some(g) => g,
                None => self.problem.gap(state.x()).expect("checked at construction"),
            };
            self.results.push(Checkpoint {
                steps: t,
                averaged_gap: self.problem.gap(&avg).expect("checked at construction"),
                last_gap,
                regret: (self.gap_every == 1).then_some(self.regret),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub(crate) fn finish(
        self,
        state: &ServerState,
        config: &EngineConfig,
        delay_clamps: u64,
    ) -> RunOutput {
        let averaged = state.averaged_iterate().ok();
        let averaged_gap = averaged.as_ref().and_then(|a| self.problem.gap(a));
        let spec = state.policy().spec();
        RunOutput {
            record: RunRecord {
                seed: config.seed,
                config_hash: config.hash(),
                lipschitz: spec.lipschitz,
                alpha0: spec.alpha0,
                f_star: self.problem.f_star,
                rows: self.rows,
                final_iterate: state.x().to_vec(),
                averaged_iterate: averaged,
                averaged_gap,
                final_gap: self.problem.gap(state.x()),
            },
            checkpoints: self.results,
            trajectory: self.trajectory,
            delay_clamps,
            policy_clamps: state.policy().clamp_events(),
            counts: state.element_counts(),
        }
    }
}

fn default_history_cap(delay: &DelayModelSpec) -> usize {
    match delay.max_delay() {
        Some(m) => m as usize + 1,
        None => 4096,
    }
}

/// Run `T` updates with delays drawn from `config.delay`. The gradient
/// applied at `t` is computed at the stored iterate `x(t - tau)`.
pub fn run(problem: &Problem, config: &EngineConfig) -> Result<RunOutput> {
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    if problem.x0.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            left: problem.x0.len(),
            right: problem.dim(),
        });
    }
    let cap = config.history_cap.unwrap_or_else(|| default_history_cap(&config.delay));
    let mut state = ServerState::new(
        problem.x0.clone(),
        config.policy,
        problem.projection.clone(),
        Some(cap),
    )?;
    let mut delays = DelayProcess::new(config.delay.clone(), stream_rng(config.seed, Stream::Delay))?;
    let mut oracle = stream_rng(config.seed, Stream::Oracle);
    let mut recorder = Recorder::new(problem, config, state.x())?;

    for _ in 0..config.steps {
        let t = state.t();
        let sample = delays.sample(t)?;
        let batch = problem.objective.sample_batch(config.batch_size, &mut oracle);
        let (x_lag, snap) = state.lagged(sample.tau)?;
        let gradient = problem.objective.stochastic_gradient(x_lag, &batch, &mut oracle)?;
        let snap = snap.map(<[f64]>::to_vec);
        let msg = DelayedGradientMessage {
            gradient,
            computed_at: sample.source_time,
            worker_id: 0,
            minibatch_id: t.get(),
        };
        let applied = state.apply_update(&msg, snap.as_deref())?;
        recorder.record(&state, applied.row, &msg.gradient)?;
    }
    Ok(recorder.finish(&state, config, delays.clamp_count()))
}

/// JSON metadata of a run; the rows live in a sibling CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RunHeader<C> {
    seed: u64,
    config_hash: String,
    lipschitz: f64,
    alpha0: f64,
    f_star: Option<f64>,
    final_iterate: Vec<f64>,
    averaged_iterate: Option<Vec<f64>>,
    averaged_gap: Option<f64>,
    final_gap: Option<f64>,
    config: C,
}

/// Write `<stem>.csv` (t, tau, eta, alpha, f_gap) and `<stem>.json` (metadata
/// plus `config`).
pub fn write_run(dir: &Path, stem: &str, record: &RunRecord, config: &impl Serialize) -> Result<()> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    for row in &record.rows {
        w.serialize(row)?;
    }
    if record.rows.is_empty() {
        w.write_record(["t", "tau", "eta", "alpha", "f_gap"])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let json_path = dir.join(format!("{stem}.json"));
    let header = RunHeader {
        seed: record.seed,
        config_hash: record.config_hash.clone(),
        lipschitz: record.lipschitz,
        alpha0: record.alpha0,
        f_star: record.f_star,
        final_iterate: record.final_iterate.clone(),
        averaged_iterate: record.averaged_iterate.clone(),
        averaged_gap: record.averaged_gap,
        final_gap: record.final_gap,
        config,
    };
    let file = File::create(&json_path).map_err(|e| Error::io(&json_path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &header)?;
    Ok(())
}

/// Read a run written by [`write_run`], returning the record and the raw config.
pub fn read_run(dir: &Path, stem: &str) -> Result<(RunRecord, serde_json::Value)> {
    let json_path = dir.join(format!("{stem}.json"));
    let file = File::open(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: RunHeader<serde_json::Value> = serde_json::from_reader(BufReader::new(file))?;
    let mut rdr = csv::Reader::from_path(dir.join(format!("{stem}.csv")))?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<StepRow>, _>>()?;
    Ok((
        RunRecord {
            seed: header.seed,
            config_hash: header.config_hash,
            lipschitz: header.lipschitz,
            alpha0: header.alpha0,
            f_star: header.f_star,
            rows,
            final_iterate: header.final_iterate,
            averaged_iterate: header.averaged_iterate,
            averaged_gap: header.averaged_gap,
            final_gap: header.final_gap,
        },
        header.config,
    ))
}
