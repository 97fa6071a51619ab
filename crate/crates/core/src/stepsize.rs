//! Step-size policies. Every policy produces an offset `eta` and the step is
//! `alpha = alpha0 / (L + eta)`, either once per update or per coordinate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::TimeIndex;
use crate::vector::Vector;

/// Optional clamp of the per-coordinate `c_j` to `[m1, m2]` once `t > warmup`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordBounds {
    pub m1: f64,
    pub m2: f64,
    pub warmup: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    /// `eta = c (t + tau)^beta`.
    AdaDelay { c: f64, beta: f64 },
    /// `eta_j = c_j sqrt(t + tau)` with `c_j² = (1/t) sum_i (i/(i+tau_i)) g_j(i)²`.
    AdaDelayCoord { bounds: Option<CoordBounds> },
    /// `eta_j = sqrt(sum_i g_j(i)²)`.
    AsyncAdaGrad,
    /// `eta_j = sqrt(max(0, sum_i g_j(i)² + 2 g_j g_j^bak))`.
    AdaptiveRevision,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::AdaDelay { .. } => "adadelay",
            PolicyKind::AdaDelayCoord { .. } => "adadelay_coord",
            PolicyKind::AsyncAdaGrad => "async_adagrad",
            PolicyKind::AdaptiveRevision => "adaptive_revision",
        }
    }

    pub fn is_coordinatewise(&self) -> bool {
        !matches!(self, PolicyKind::AdaDelay { .. })
    }

    pub fn needs_backlog(&self) -> bool {
        matches!(self, PolicyKind::AdaptiveRevision)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub lipschitz: f64,
    pub alpha0: f64,
}

impl PolicySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lipschitz.is_finite() && self.lipschitz > 0.0) {
            return Err(Error::invalid("lipschitz", "must be positive"));
        }
        if !(self.alpha0.is_finite() && self.alpha0 > 0.0) {
            return Err(Error::invalid("alpha0", "must be positive"));
        }
        match self.kind {
            PolicyKind::AdaDelay { c, beta } => {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::invalid("c", format!("must be positive, got {c}")));
                }
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(Error::invalid("beta", format!("must lie in (0, 1), got {beta}")));
                }
            }
            PolicyKind::AdaDelayCoord { bounds: Some(b) } => {
                if !(b.m1 > 0.0 && b.m1 <= b.m2 && b.m2.is_finite()) {
                    return Err(Error::invalid("bounds", "need 0 < m1 <= m2 < inf"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn alpha(&self, eta: f64) -> f64 {
        self.alpha0 / (self.lipschitz + eta)
    }
}

/// `c (t + tau)^beta`.
pub fn eta_adadelay(c: f64, beta: f64, t: TimeIndex, tau: u64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::invalid("c", format!("must be positive, got {c}")));
    }
    let base = (t.get() + tau) as f64;
    // The square-root case is the common one; keep it correctly rounded.
    Ok(c * if beta == 0.5 { base.sqrt() } else { base.powf(beta) })
}

/// Fold one delayed gradient coordinate into the weighted sum `s` and return
/// `(c_j, eta_j)` for this update.
pub fn eta_adadelay_coord(s: &mut f64, t: TimeIndex, tau: u64, g: f64) -> (f64, f64) {
    let t_f = t.get() as f64;
    let ttau = (t.get() + tau) as f64;
    *s += t_f / ttau * g * g;
    let c = (*s / t_f).sqrt();
    (c, c * ttau.sqrt())
}

/// Fold `g` into the squared-gradient sum and return its square root.
pub fn eta_async_adagrad(acc: &mut f64, g: f64) -> f64 {
    *acc += g * g;
    acc.sqrt()
}

/// Fold `g` into the squared-gradient sum and return the revised offset and
/// whether the square-root argument had to be clamped at zero.
pub fn eta_adaptive_revision(acc: &mut f64, g: f64, g_bak: f64) -> (f64, bool) {
    *acc += g * g;
    let arg = *acc + 2.0 * g * g_bak;
    (arg.max(0.0).sqrt(), arg < 0.0)
}

/// Server-side entries stored for each feature, including the weight.
pub fn state_entries_per_feature(kind: &PolicyKind) -> usize {
    match kind {
        PolicyKind::AdaDelay { .. } => 1,
        PolicyKind::AdaDelayCoord { .. } | PolicyKind::AsyncAdaGrad => 2,
        PolicyKind::AdaptiveRevision => 4,
    }
}

/// Offsets for one update: a single scalar or one per stored gradient entry.
#[derive(Clone, Debug, PartialEq)]
pub enum Offsets {
    Scalar(f64),
    PerEntry(Vec<f64>),
}

impl Offsets {
    /// The value logged in the run record: the scalar offset, or the mean over
    /// the entries of the update.
    pub fn logged(&self) -> f64 {
        match self {
            Offsets::Scalar(e) => *e,
            Offsets::PerEntry(v) if v.is_empty() => 0.0,
            Offsets::PerEntry(v) => v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum PolicyState {
    Scalar,
    Coord {
        s: Vec<f64>,
    },
    AdaGrad {
        a: Vec<f64>,
    },
    Revision {
        a: Vec<f64>,
        /// Running sum of every applied gradient, per coordinate.
        z: Vec<f64>,
        /// `g^bak` of the update being applied.
        bak: Vec<f64>,
    },
}

/// Step-size policy together with its server-side state.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPolicy {
    spec: PolicySpec,
    state: PolicyState,
    clamp_events: u64,
}

impl StepPolicy {
    pub fn new(spec: PolicySpec, dim: usize) -> Result<Self> {
        spec.validate()?;
        let state = match spec.kind {
            PolicyKind::AdaDelay { .. } => PolicyState::Scalar,
            PolicyKind::AdaDelayCoord { .. } => PolicyState::Coord { s: vec![0.0; dim] },
            PolicyKind::AsyncAdaGrad => PolicyState::AdaGrad { a: vec![0.0; dim] },
            PolicyKind::AdaptiveRevision => PolicyState::Revision {
                a: vec![0.0; dim],
                z: vec![0.0; dim],
                bak: vec![0.0; dim],
            },
        };
        Ok(Self {
            spec,
            state,
            clamp_events: 0,
        })
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    /// Clamp events so far: `c_j` clamps for bounded AdaDelay, negative
    /// square-root arguments for AdaptiveRevision.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    /// Per-feature arrays held by the policy (the weight array is not included).
    pub fn feature_arrays(&self) -> Vec<&[f64]> {
        match &self.state {
            PolicyState::Scalar => vec![],
            PolicyState::Coord { s } => vec![s],
            PolicyState::AdaGrad { a } => vec![a],
            PolicyState::Revision { a, z, bak } => vec![a, z, bak],
        }
    }

    /// Snapshot taken when a worker pulls. Only AdaptiveRevision needs one:
    /// the running gradient sum, so that `g^bak` can be formed at push time.
    pub fn pull_snapshot(&self) -> Option<Vec<f64>> {
        match &self.state {
            PolicyState::Revision { z, .. } => Some(z.clone()),
            _ => None,
        }
    }

    /// Compute the offsets for applying `grad` at time `t` with delay `tau`
    /// and fold the gradient into the policy state. `snapshot` is the
    /// [`pull_snapshot`](Self::pull_snapshot) taken when the gradient's
    /// iterate was read.
    pub fn offsets(
        &mut self,
        t: TimeIndex,
        tau: u64,
        grad: &Vector,
        snapshot: Option<&[f64]>,
    ) -> Result<Offsets> {
        let kind = self.spec.kind;
        match (&mut self.state, kind) {
            (PolicyState::Scalar, PolicyKind::AdaDelay { c, beta }) => {
                Ok(Offsets::Scalar(eta_adadelay(c, beta, t, tau)?))
            }
            (PolicyState::Coord { s }, PolicyKind::AdaDelayCoord { bounds }) => {
                let dim = s.len();
                let mut out = Vec::with_capacity(grad.stored_len());
                for (j, g) in grad.entries() {
                    let slot = s
                        .get_mut(j as usize)
                        .ok_or(Error::IndexOutOfRange { index: j, len: dim })?;
                    let (c, eta) = eta_adadelay_coord(slot, t, tau, g);
                    let eta = match bounds {
                        Some(b) if t.get() > b.warmup && (c < b.m1 || c > b.m2) => {
                            self.clamp_events += 1;
                            c.clamp(b.m1, b.m2) * ((t.get() + tau) as f64).sqrt()
                        }
                        _ => eta,
                    };
                    out.push(eta);
                }
                Ok(Offsets::PerEntry(out))
            }
            (PolicyState::AdaGrad { a }, PolicyKind::AsyncAdaGrad) => {
                let dim = a.len();
                let mut out = Vec::with_capacity(grad.stored_len());
                for (j, g) in grad.entries() {
                    let slot = a
                        .get_mut(j as usize)
                        .ok_or(Error::IndexOutOfRange { index: j, len: dim })?;
                    out.push(eta_async_adagrad(slot, g));
                }
                Ok(Offsets::PerEntry(out))
            }
            (PolicyState::Revision { a, z, bak }, PolicyKind::AdaptiveRevision) => {
                let dim = a.len();
                if let Some(snap) = snapshot {
                    if snap.len() != dim {
                        return Err(Error::DimensionMismatch {
                            left: snap.len(),
                            right: dim,
                        });
                    }
                }
                let mut out = Vec::with_capacity(grad.stored_len());
                for (j, g) in grad.entries() {
                    let j = j as usize;
                    if j >= dim {
                        return Err(Error::IndexOutOfRange {
                            index: j as u64,
                            len: dim,
                        });
                    }
                    bak[j] = snapshot.map_or(0.0, |snap| z[j] - snap[j]);
                    let (eta, clamped) = eta_adaptive_revision(&mut a[j], g, bak[j]);
                    self.clamp_events += clamped as u64;
                    z[j] += g;
                    out.push(eta);
                }
                Ok(Offsets::PerEntry(out))
            }
            _ => unreachable!("policy state always matches its kind"),
        }
    }

    /// Current `c_j` of AdaDelay-coord at time `t`, if applicable.
    pub fn coord_c(&self, j: usize, t: TimeIndex) -> Option<f64> {
        match &self.state {
            PolicyState::Coord { s } => s.get(j).map(|s| (s / t.get() as f64).sqrt()),
            _ => None,
        }
    }

    /// Current squared-gradient sum of AsyncAdaGrad or AdaptiveRevision.
    pub fn accumulator(&self, j: usize) -> Option<f64> {
        match &self.state {
            PolicyState::AdaGrad { a } | PolicyState::Revision { a, .. } => a.get(j).copied(),
            _ => None,
        }
    }
}
