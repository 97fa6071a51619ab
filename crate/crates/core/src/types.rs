//! Bookkeeping types shared by the engine, simulator and diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::Vector;

/// Server update counter. Starts at 1 and increases by one per applied update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeIndex(u64);

impl TimeIndex {
    pub const FIRST: TimeIndex = TimeIndex(1);

    pub fn new(t: u64) -> Result<Self> {
        if t == 0 {
            return Err(Error::invalid("t", "time indices start at 1"));
        }
        Ok(TimeIndex(t))
    }

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn next(self) -> Self {
        TimeIndex(self.0 + 1)
    }
}

/// A delay `tau` observed at apply time `t`; the gradient was computed at `t - tau`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelaySample {
    pub tau: u64,
    pub source_time: TimeIndex,
}

impl DelaySample {
    pub fn at(t: TimeIndex, tau: u64) -> Result<Self> {
        if tau >= t.get() {
            return Err(Error::invalid(
                "tau",
                format!("delay {tau} at t={} predates the first iterate", t.get()),
            ));
        }
        Ok(Self {
            tau,
            source_time: TimeIndex(t.get() - tau),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayedGradientMessage {
    pub gradient: Vector,
    pub computed_at: TimeIndex,
    pub worker_id: usize,
    pub minibatch_id: u64,
}

/// Smoothness, gradient bound, domain radius and noise level of a problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Lipschitz constant of the gradient.
    pub lipschitz: f64,
    /// Bound on the root-mean-square norm of a stochastic gradient over the
    /// domain, `sqrt(sup ||∇f||² + sigma²)`.
    pub grad_bound: f64,
    /// `max_{x in X} ||x - x*||`.
    pub radius: f64,
    /// Bound on the gradient noise standard deviation (Euclidean).
    pub sigma: f64,
}

impl ProblemConstants {
    pub fn new(lipschitz: f64, grad_bound: f64, radius: f64, sigma: f64) -> Result<Self> {
        for (name, v) in [
            ("lipschitz", lipschitz),
            ("grad_bound", grad_bound),
            ("radius", radius),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        // Noiseless oracles are allowed.
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid("sigma", format!("must be finite and nonnegative, got {sigma}")));
        }
        Ok(Self {
            lipschitz,
            grad_bound,
            radius,
            sigma,
        })
    }
}

/// One applied server update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t: u64,
    pub tau: u64,
    /// Step offset. For coordinate-wise policies this is the mean offset over
    /// the coordinates touched by the update.
    pub eta: f64,
    /// `alpha0 / (L + eta)`.
    pub alpha: f64,
    /// `f(x(t+1)) - f*` when it was evaluated for this row.
    pub f_gap: Option<f64>,
}

/// Everything logged by one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config_hash: String,
    pub lipschitz: f64,
    pub alpha0: f64,
    pub f_star: Option<f64>,
    pub rows: Vec<StepRow>,
    pub final_iterate: Vec<f64>,
    pub averaged_iterate: Option<Vec<f64>>,
    /// `f(x̄(T)) - f*`.
    pub averaged_gap: Option<f64>,
    /// `f(x(T+1)) - f*`.
    pub final_gap: Option<f64>,
}

impl RunRecord {
    pub fn taus(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.tau).collect()
    }

    /// Rows are ordered by `t = 1, 2, ...` without gaps and satisfy
    /// `alpha (L + eta) = alpha0` to rounding.
    pub fn check_rows(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.t != i as u64 + 1 {
                return Err(Error::invalid("rows", format!("row {i} has t={}", row.t)));
            }
            let product = row.alpha * (self.lipschitz + row.eta);
            if (product - self.alpha0).abs() > 8.0 * f64::EPSILON * self.alpha0 {
                return Err(Error::invalid(
                    "rows",
                    format!("row t={} has alpha*(L+eta)={product}", row.t),
                ));
            }
        }
        Ok(())
    }
}
