//! Objectives, stochastic gradient oracles, feasible sets and datasets.

mod data;
mod fstar;
mod projection;
mod synthetic;

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use data::{read_libsvm, Dataset, DatasetHandle, Example, IndexBase};
pub use fstar::{estimate_fstar, FStarEstimate};
pub use projection::ProjectionSet;
pub use synthetic::{
    make_sparse_logistic, make_synthetic, make_synthetic_with, Placement, SparseLogisticSpec,
    Synthetic, SyntheticSpec,
};

use crate::error::{Error, Result};
use crate::vector::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    LeastSquares,
    Logistic,
    QuadraticSynthetic,
}

/// `f(x) = ½ Σ_j h_j (x_j - p_j)²` with additive Gaussian gradient noise.
///
/// Each oracle draw adds `N(0, σ²/d · I)` so that `E||noise||² = σ²`; a batch
/// of `b` draws averages them, giving variance `σ²/b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub center: Vec<f64>,
    pub curvature: Vec<f64>,
    pub sigma: f64,
}

/// Empirical loss over a dataset with an optional ridge term `λ/2 ||x||²`.
#[derive(Clone, Debug)]
pub struct DataObjective {
    pub data: Arc<Dataset>,
    pub l2: f64,
}

#[derive(Clone, Debug)]
pub enum Objective {
    Quadratic(Quadratic),
    Logistic(DataObjective),
    LeastSquares(DataObjective),
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl DataObjective {
    fn margin(&self, e: &Example, x: &[f64]) -> f64 {
        e.features
            .iter()
            .map(|(i, v)| v * x[i as usize])
            .sum()
    }
}

impl Objective {
    pub fn kind(&self) -> ObjectiveKind {
        match self {
            Objective::Quadratic(_) => ObjectiveKind::QuadraticSynthetic,
            Objective::Logistic(_) => ObjectiveKind::Logistic,
            Objective::LeastSquares(_) => ObjectiveKind::LeastSquares,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Objective::Quadratic(q) => q.center.len(),
            Objective::Logistic(d) | Objective::LeastSquares(d) => d.data.dim,
        }
    }

    /// Number of samples to draw minibatches from; `None` for synthetic oracles.
    pub fn num_samples(&self) -> Option<usize> {
        match self {
            Objective::Quadratic(_) => None,
            Objective::Logistic(d) | Objective::LeastSquares(d) => Some(d.data.len()),
        }
    }

    /// Upper bound on the Lipschitz constant of the gradient.
    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            Objective::Quadratic(q) => q.curvature.iter().copied().fold(0.0, f64::max),
            Objective::Logistic(d) => 0.25 * d.data.mean_sq_row_norm() + d.l2,
            Objective::LeastSquares(d) => d.data.mean_sq_row_norm() + d.l2,
        }
    }

    /// Deterministic objective over all samples (closed form for synthetic problems).
    pub fn full_objective(&self, x: &[f64]) -> f64 {
        match self {
            Objective::Quadratic(q) => {
                0.5 * x
                    .iter()
                    .zip(&q.center)
                    .zip(&q.curvature)
                    .map(|((xi, p), h)| h * (xi - p) * (xi - p))
                    .sum::<f64>()
            }
            Objective::Logistic(d) => {
                let n = d.data.len().max(1) as f64;
                let loss: f64 = d
                    .data
                    .examples
                    .iter()
                    .map(|e| {
                        let z = d.margin(e, x);
                        softplus(z) - e.label * z
                    })
                    .sum();
                loss / n + ridge(d.l2, x)
            }
            Objective::LeastSquares(d) => {
                let n = d.data.len().max(1) as f64;
                let loss: f64 = d
                    .data
                    .examples
                    .iter()
                    .map(|e| {
                        let r = d.margin(e, x) - e.label;
                        0.5 * r * r
                    })
                    .sum();
                loss / n + ridge(d.l2, x)
            }
        }
    }

    /// Exact gradient of [`Objective::full_objective`].
    pub fn full_gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Objective::Quadratic(q) => x
                .iter()
                .zip(&q.center)
                .zip(&q.curvature)
                .map(|((xi, p), h)| h * (xi - p))
                .collect(),
            Objective::Logistic(d) | Objective::LeastSquares(d) => {
                let n = d.data.len().max(1) as f64;
                let mut g: Vec<f64> = x.iter().map(|xi| d.l2 * xi).collect();
                for e in &d.data.examples {
                    let r = self.residual(d, e, x) / n;
                    for (i, v) in e.features.iter() {
                        g[i as usize] += r * v;
                    }
                }
                g
            }
        }
    }

    fn residual(&self, d: &DataObjective, e: &Example, x: &[f64]) -> f64 {
        let z = d.margin(e, x);
        match self {
            Objective::Logistic(_) => sigmoid(z) - e.label,
            _ => z - e.label,
        }
    }

    /// Draw `size` sample ids uniformly with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<usize> {
        match self.num_samples() {
            Some(n) if n > 0 => (0..size).map(|_| rng.random_range(0..n)).collect(),
            _ => (0..size).collect(),
        }
    }

    /// Minibatch-mean stochastic gradient at `x`.
    ///
    /// For data objectives without a ridge term the result is sparse; otherwise dense.
    pub fn stochastic_gradient<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        batch: &[usize],
        rng: &mut R,
    ) -> Result<Vector> {
        if batch.is_empty() {
            return Err(Error::Empty("minibatch"));
        }
        match self {
            Objective::Quadratic(q) => {
                let d = q.center.len() as f64;
                let scale = q.sigma / (d * batch.len() as f64).sqrt();
                let mut g = self.full_gradient(x);
                if scale > 0.0 {
                    for gi in g.iter_mut() {
                        let z: f64 = StandardNormal.sample(rng);
                        *gi += scale * z;
                    }
                }
                Ok(Vector::Dense(g))
            }
            Objective::Logistic(d) | Objective::LeastSquares(d) => {
                let rows = d.data.len();
                let inv_b = 1.0 / batch.len() as f64;
                let mut pairs: Vec<(u64, f64)> = Vec::new();
                for &id in batch {
                    let e = d
                        .data
                        .examples
                        .get(id)
                        .ok_or(Error::SampleOutOfRange { id, rows })?;
                    let r = self.residual(d, e, x) * inv_b;
                    pairs.extend(e.features.iter().map(|(i, v)| (i, r * v)));
                }
                pairs.sort_by_key(|p| p.0);
                let mut merged: Vec<(u64, f64)> = Vec::with_capacity(pairs.len());
                for (i, v) in pairs {
                    match merged.last_mut() {
                        Some(last) if last.0 == i => last.1 += v,
                        _ => merged.push((i, v)),
                    }
                }
                if d.l2 > 0.0 {
                    let mut g: Vec<f64> = x.iter().map(|xi| d.l2 * xi).collect();
                    for (i, v) in merged {
                        g[i as usize] += v;
                    }
                    Vector::dense(g)
                } else {
                    Vector::sparse(merged)
                }
            }
        }
    }
}

fn ridge(l2: f64, x: &[f64]) -> f64 {
    if l2 == 0.0 {
        0.0
    } else {
        0.5 * l2 * x.iter().map(|v| v * v).sum::<f64>()
    }
}
