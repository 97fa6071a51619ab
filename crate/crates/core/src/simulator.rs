//! Event-driven parameter-server simulation.
//!
//! Each worker repeats: read a minibatch (`read_time`), pull the current
//! weights, compute for `service_time × slowdown`, push the gradient. The
//! server applies one update per push, and the delay of that update is the
//! number of updates applied between the worker's pull and its push.
//!
//! Events are ordered by `(sim_time, push before pull, worker_id)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::delay::{delay_stats, DelayModelSpec, DelayStats};
use crate::engine::{EngineConfig, Problem, Recorder, RunOutput, ServerState};
use crate::error::{Error, Result};
use crate::seed::{stream_rng, Stream};
use crate::types::{DelayedGradientMessage, TimeIndex};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServiceDist {
    Exponential { mean: f64 },
    Deterministic { value: f64 },
    /// `exp(N(mu, sigma²))`.
    LogNormal { mu: f64, sigma: f64 },
}

impl ServiceDist {
    fn validate(&self, allow_zero: bool) -> Result<()> {
        let ok = match *self {
            ServiceDist::Exponential { mean } => mean.is_finite() && mean > 0.0,
            ServiceDist::Deterministic { value } => {
                value.is_finite() && (value > 0.0 || (allow_zero && value == 0.0))
            }
            ServiceDist::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("service_time", format!("invalid distribution {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ServiceDist::Exponential { mean } => mean,
            ServiceDist::Deterministic { value } => value,
            ServiceDist::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            ServiceDist::Exponential { mean } => {
                Exp::new(1.0 / mean).expect("validated rate").sample(rng)
            }
            ServiceDist::Deterministic { value } => value,
            ServiceDist::LogNormal { mu, sigma } => {
                LogNormal::new(mu, sigma).expect("validated parameters").sample(rng)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub worker_id: usize,
    /// Minibatch read time before each pull; may be zero.
    pub read_time: ServiceDist,
    /// Pull-to-push latency before the slowdown is applied.
    pub service_time: ServiceDist,
    /// 1 for regular workers, larger for stragglers.
    pub slowdown: f64,
    pub minibatch_size: usize,
}

impl WorkerSpec {
    fn validate(&self) -> Result<()> {
        self.read_time.validate(true)?;
        self.service_time.validate(false)?;
        if !(self.slowdown.is_finite() && self.slowdown >= 1.0) {
            return Err(Error::invalid("slowdown", format!("must be >= 1, got {}", self.slowdown)));
        }
        if self.minibatch_size == 0 {
            return Err(Error::invalid("minibatch_size", "must be at least 1"));
        }
        Ok(())
    }

    pub fn mean_service(&self) -> f64 {
        self.service_time.mean() * self.slowdown
    }
}

/// `count` identical workers with ids `0..count`.
pub fn uniform_workers(
    count: usize,
    read_time: ServiceDist,
    service_time: ServiceDist,
    minibatch_size: usize,
) -> Vec<WorkerSpec> {
    (0..count)
        .map(|worker_id| WorkerSpec {
            worker_id,
            read_time,
            service_time,
            slowdown: 1.0,
            minibatch_size,
        })
        .collect()
}

/// Slow down `⌊fraction · W⌋` workers chosen by `rng`, each by a factor drawn
/// uniformly from `factors`.
pub fn inject_stragglers(
    workers: &[WorkerSpec],
    fraction: f64,
    factors: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<WorkerSpec>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("fraction", format!("must lie in [0, 1], got {fraction}")));
    }
    if factors.is_empty() {
        return Err(Error::Empty("straggler factor set"));
    }
    if let Some(f) = factors.iter().find(|f| !(f.is_finite() && **f >= 1.0)) {
        return Err(Error::invalid("factors", format!("slowdown factors must be >= 1, got {f}")));
    }
    let mut out = workers.to_vec();
    let count = (fraction * workers.len() as f64).floor() as usize;
    for i in sample(rng, workers.len(), count) {
        out[i].slowdown = factors[rng.random_range(0..factors.len())];
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    // Declaration order is the tie-break order.
    Push,
    Pull,
}

/// One processed event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub sim_time: f64,
    pub kind: EventKind,
    pub worker: usize,
    pub minibatch: u64,
    /// Updates applied so far, after this event.
    pub server_t: u64,
}

#[derive(Clone, Copy, Debug)]
struct Scheduled {
    time: f64,
    kind: EventKind,
    worker: usize,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so that the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.kind.cmp(&self.kind))
            .then(other.worker.cmp(&self.worker))
    }
}

struct InFlight {
    minibatch: u64,
    /// Updates applied when the pull happened.
    pulled_at: u64,
    x: Vec<f64>,
    snapshot: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub record_events: bool,
    /// Fraction of updates used for the early-phase slope of [`DelayStats`].
    pub early_fraction: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            record_events: false,
            early_fraction: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub run: RunOutput,
    /// Statistics of every applied delay; `None` when no update was applied.
    pub stats: Option<DelayStats>,
    pub events: Option<Vec<SimEvent>>,
    pub pulls: u64,
    pub pushes: u64,
    /// Pulls whose push was processed before the run ended.
    pub completed_pulls: u64,
    /// Largest number of weight snapshots held by in-flight minibatches.
    pub max_pending_snapshots: usize,
}

/// Run until `config.steps` updates have been applied. `config.delay` must be
/// [`DelayModelSpec::Induced`]; `config.batch_size` and `config.history_cap`
/// are unused because workers carry their own minibatch size and snapshots.
pub fn simulate(
    workers: &[WorkerSpec],
    problem: &Problem,
    config: &EngineConfig,
    options: &SimOptions,
) -> Result<SimOutput> {
    if workers.is_empty() {
        return Err(Error::Empty("worker list"));
    }
    for w in workers {
        w.validate()?;
    }
    if config.delay != DelayModelSpec::Induced {
        return Err(Error::invalid("delay", "the simulator induces its own delays"));
    }
    let mut state = ServerState::new(problem.x0.clone(), config.policy, problem.projection.clone(), None)?;
    let mut recorder = Recorder::new(problem, config, state.x())?;
    let mut oracle = stream_rng(config.seed, Stream::Oracle);
    let mut clocks: Vec<ChaCha8Rng> = (0..workers.len())
        .map(|w| stream_rng(config.seed, Stream::Worker(w)))
        .collect();
    let mut in_flight: Vec<Option<InFlight>> = (0..workers.len()).map(|_| None).collect();
    let mut next_minibatch = vec![0u64; workers.len()];
    let mut queue = BinaryHeap::new();
    for (w, spec) in workers.iter().enumerate() {
        queue.push(Scheduled {
            time: spec.read_time.sample(&mut clocks[w]),
            kind: EventKind::Pull,
            worker: w,
        });
    }

    let mut events = options.record_events.then(Vec::new);
    let (mut pulls, mut pushes) = (0u64, 0u64);
    let mut taus = Vec::with_capacity(config.steps.min(1 << 24) as usize);
    let mut max_pending = 0;

    while state.updates() < config.steps {
        let ev = queue.pop().expect("every worker always has one pending event");
        let w = ev.worker;
        let spec = &workers[w];
        let minibatch = match ev.kind {
            EventKind::Pull => {
                pulls += 1;
                let minibatch = next_minibatch[w];
                next_minibatch[w] += 1;
                in_flight[w] = Some(InFlight {
                    minibatch,
                    pulled_at: state.updates(),
                    x: state.x().to_vec(),
                    snapshot: state.pull_snapshot(),
                });
                max_pending = max_pending.max(in_flight.iter().filter(|f| f.is_some()).count());
                queue.push(Scheduled {
                    time: ev.time + spec.service_time.sample(&mut clocks[w]) * spec.slowdown,
                    kind: EventKind::Push,
                    worker: w,
                });
                minibatch
            }
            EventKind::Push => {
                pushes += 1;
                let job = in_flight[w].take().expect("a push always follows a pull");
                let batch = problem.objective.sample_batch(spec.minibatch_size, &mut oracle);
                let gradient = problem.objective.stochastic_gradient(&job.x, &batch, &mut oracle)?;
                let msg = DelayedGradientMessage {
                    gradient,
                    computed_at: TimeIndex::new(job.pulled_at + 1)?,
                    worker_id: spec.worker_id,
                    minibatch_id: job.minibatch,
                };
                let applied = state.apply_update(&msg, job.snapshot.as_deref())?;
                taus.push(applied.row.tau);
                recorder.record(&state, applied.row, &msg.gradient)?;
                queue.push(Scheduled {
                    time: ev.time + spec.read_time.sample(&mut clocks[w]),
                    kind: EventKind::Pull,
                    worker: w,
                });
                job.minibatch
            }
        };
        if let Some(log) = &mut events {
            log.push(SimEvent {
                sim_time: ev.time,
                kind: ev.kind,
                worker: spec.worker_id,
                minibatch,
                server_t: state.updates(),
            });
        }
    }

    let stats = if taus.is_empty() {
        None
    } else {
        Some(delay_stats(&taus, options.early_fraction)?)
    };
    Ok(SimOutput {
        run: recorder.finish(&state, config, 0),
        stats,
        events,
        pulls,
        pushes,
        completed_pulls: pushes,
        max_pending_snapshots: max_pending,
    })
}

/// Write the event log as CSV with columns sim_time, kind, worker, minibatch, server_t.
pub fn write_event_log(path: &Path, events: &[SimEvent]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if events.is_empty() {
        w.write_record(["sim_time", "kind", "worker", "minibatch", "server_t"])?;
    }
    for e in events {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Recompute each applied delay from an event log as the number of other
/// pushes processed between the worker's pull and its push.
pub fn delays_from_events(events: &[SimEvent]) -> Vec<u64> {
    let mut pull_index: std::collections::HashMap<(usize, u64), u64> = Default::default();
    let mut pushes_so_far = 0u64;
    let mut out = Vec::new();
    for e in events {
        match e.kind {
            EventKind::Pull => {
                pull_index.insert((e.worker, e.minibatch), pushes_so_far);
            }
            EventKind::Push => {
                let at_pull = pull_index[&(e.worker, e.minibatch)];
                out.push(pushes_so_far - at_pull);
                pushes_so_far += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::make_synthetic;
    use crate::stepsize::{PolicyKind, PolicySpec};
    use rand::SeedableRng;

    fn problem() -> Problem {
        Problem::from(&make_synthetic(4, 1.0, 3.0, 1).unwrap())
    }

    fn config(steps: u64, seed: u64) -> EngineConfig {
        EngineConfig::new(
            steps,
            seed,
            PolicySpec {
                kind: PolicyKind::AdaDelay { c: 1.0, beta: 0.5 },
                lipschitz: 1.0,
                alpha0: 1.0,
            },
            DelayModelSpec::Induced,
        )
    }

    fn det(v: f64) -> ServiceDist {
        ServiceDist::Deterministic { value: v }
    }

    #[test]
    fn single_worker_has_no_delay() {
        let workers = uniform_workers(
            1,
            ServiceDist::Exponential { mean: 1.0 },
            ServiceDist::LogNormal { mu: 0.0, sigma: 1.0 },
            1,
        );
        let out = simulate(&workers, &problem(), &config(500, 3), &SimOptions::default()).unwrap();
        assert!(out.run.record.taus().iter().all(|&t| t == 0));
    }

    #[test]
    fn hand_executed_schedule() {
        let mut workers = uniform_workers(2, det(0.0), det(1.0), 1);
        workers[1].service_time = det(2.0);
        let opts = SimOptions {
            record_events: true,
            ..Default::default()
        };
        let out = simulate(&workers, &problem(), &config(6, 0), &opts).unwrap();
        use EventKind::{Pull, Push};
        let got: Vec<(f64, EventKind, usize)> = out
            .events
            .unwrap()
            .iter()
            .take(10)
            .map(|e| (e.sim_time, e.kind, e.worker))
            .collect();
        let expected = vec![
            (0.0, Pull, 0),
            (0.0, Pull, 1),
            (1.0, Push, 0),
            (1.0, Pull, 0),
            (2.0, Push, 0),
            (2.0, Push, 1),
            (2.0, Pull, 0),
            (2.0, Pull, 1),
            (3.0, Push, 0),
            (3.0, Pull, 0),
        ];
        assert_eq!(got, expected);
        assert_eq!(out.run.record.taus(), vec![0, 0, 2, 0, 0, 2]);
    }

    #[test]
    fn identical_workers_alternate() {
        let workers = uniform_workers(2, det(0.0), det(1.0), 1);
        let out = simulate(&workers, &problem(), &config(10, 0), &SimOptions::default()).unwrap();
        assert_eq!(out.run.record.taus(), vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn conservation_and_measured_delays() {
        let workers = uniform_workers(
            8,
            ServiceDist::Exponential { mean: 1.0 },
            ServiceDist::Exponential { mean: 1.0 },
            2,
        );
        let opts = SimOptions {
            record_events: true,
            ..Default::default()
        };
        let out = simulate(&workers, &problem(), &config(2000, 5), &opts).unwrap();
        assert_eq!(out.pushes, 2000);
        assert_eq!(out.completed_pulls, out.pushes);
        assert!(out.pulls >= out.pushes && out.pulls <= out.pushes + 8);
        let events = out.events.unwrap();
        assert_eq!(delays_from_events(&events), out.run.record.taus());
        assert!(events.windows(2).all(|w| w[0].sim_time <= w[1].sim_time));
        out.run.record.check_rows().unwrap();
    }

    #[test]
    fn determinism() {
        let workers = uniform_workers(5, det(0.1), ServiceDist::Exponential { mean: 1.0 }, 1);
        let opts = SimOptions {
            record_events: true,
            ..Default::default()
        };
        let a = simulate(&workers, &problem(), &config(300, 8), &opts).unwrap();
        let b = simulate(&workers, &problem(), &config(300, 8), &opts).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.run.record, b.run.record);
    }

    #[test]
    fn stragglers() {
        let base = uniform_workers(4, det(0.0), ServiceDist::Exponential { mean: 1.0 }, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(inject_stragglers(&base, 0.0, &[4.0], &mut rng).unwrap(), base);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = inject_stragglers(&base, 0.5, &[1.0, 4.0], &mut rng).unwrap();
            let touched: Vec<usize> = (0..4).filter(|&i| s[i] != base[i]).collect();
            assert!(touched.len() <= 2);
            assert!(s.iter().all(|w| w.slowdown == 1.0 || w.slowdown == 4.0));
        }
        let all = inject_stragglers(&base, 1.0, &[2.0], &mut rng).unwrap();
        for (a, b) in all.iter().zip(&base) {
            assert_eq!(a.mean_service(), 2.0 * b.mean_service());
        }
        assert!(inject_stragglers(&base, 0.5, &[], &mut rng).is_err());
        assert!(inject_stragglers(&base, 1.5, &[2.0], &mut rng).is_err());
    }

    #[test]
    fn straggler_selection_counts_exactly() {
        // With factor set {4} every selected worker changes, so exactly
        // ⌊fraction · W⌋ workers differ.
        let base = uniform_workers(4, det(0.0), ServiceDist::Exponential { mean: 1.0 }, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = inject_stragglers(&base, 0.5, &[4.0], &mut rng).unwrap();
        assert_eq!(s.iter().filter(|w| w.slowdown == 4.0).count(), 2);
    }

    #[test]
    fn event_log_csv() {
        let workers = uniform_workers(2, det(0.0), det(1.0), 1);
        let opts = SimOptions {
            record_events: true,
            ..Default::default()
        };
        let out = simulate(&workers, &problem(), &config(2, 0), &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        write_event_log(&path, out.events.as_ref().unwrap()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("sim_time,kind,worker,minibatch,server_t"));
        assert_eq!(lines.next(), Some("0.0,pull,0,0,0"));
    }

    #[test]
    fn rejects_sampled_delay_models() {
        let workers = uniform_workers(2, det(0.0), det(1.0), 1);
        let mut cfg = config(5, 0);
        cfg.delay = DelayModelSpec::Uniform { tau_bar: 1 };
        assert!(simulate(&workers, &problem(), &cfg, &SimOptions::default()).is_err());
        assert!(simulate(&[], &problem(), &config(5, 0), &SimOptions::default()).is_err());
    }
}
