//! Ground-truth problem generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Example, Objective, ProjectionSet, Quadratic};
use crate::error::{Error, Result};
use crate::types::ProblemConstants;
use crate::vector::{norm, SparseVector};

/// Where the constrained minimizer sits relative to the feasible ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Placement {
    /// Unconstrained minimizer strictly inside the ball, at distance
    /// `x_star_norm` from the origin. Curvatures are drawn from `[0.25, 1]`
    /// with the first fixed at 1, so `L = 1`.
    Interior { x_star_norm: f64 },
    /// Isotropic quadratic centered at distance `radius + offset` from the
    /// origin, so the constraint is active and `x*` lies on the sphere.
    Boundary { offset: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub sigma: f64,
    /// Radius of the feasible ball centered at the origin.
    pub radius: f64,
    pub placement: Placement,
    pub seed: u64,
}

/// A quadratic instance with known minimizer and constants.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub objective: Objective,
    pub projection: ProjectionSet,
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub constants: ProblemConstants,
    /// Starting point `x(1)`: the origin.
    pub x0: Vec<f64>,
}

impl Synthetic {
    pub fn quadratic(&self) -> &Quadratic {
        match &self.objective {
            Objective::Quadratic(q) => q,
            _ => unreachable!("synthetic instances are quadratic"),
        }
    }
}

/// Interior-minimizer quadratic with `||x*|| = 1`.
pub fn make_synthetic(dim: usize, sigma: f64, radius: f64, seed: u64) -> Result<Synthetic> {
    make_synthetic_with(&SyntheticSpec {
        dim,
        sigma,
        radius,
        placement: Placement::Interior { x_star_norm: 1.0 },
        seed,
    })
}

pub fn make_synthetic_with(spec: &SyntheticSpec) -> Result<Synthetic> {
    if spec.dim == 0 {
        return Err(Error::invalid("dim", "must be at least 1"));
    }
    if !(spec.sigma.is_finite() && spec.sigma >= 0.0) {
        return Err(Error::invalid("sigma", "must be finite and nonnegative"));
    }
    let projection = ProjectionSet::ball(spec.radius)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let direction = random_unit(spec.dim, &mut rng);
    let rho = spec.radius;

    let (center, curvature, x_star, f_star, radius_const, grad_bound) = match spec.placement {
        Placement::Interior { x_star_norm } => {
            if !(x_star_norm >= 0.0 && x_star_norm < rho) {
                return Err(Error::invalid(
                    "radius",
                    format!("ball radius {rho} does not strictly contain ||x*|| = {x_star_norm}"),
                ));
            }
            let x_star: Vec<f64> = direction.iter().map(|u| u * x_star_norm).collect();
            let curvature: Vec<f64> = (0..spec.dim)
                .map(|j| if j == 0 { 1.0 } else { rng.random_range(0.25..1.0) })
                .collect();
            let r = rho + x_star_norm;
            (x_star.clone(), curvature, x_star, 0.0, r, r)
        }
        Placement::Boundary { offset } => {
            if !(offset > 0.0 && offset.is_finite()) {
                return Err(Error::invalid("offset", "must be positive"));
            }
            let center: Vec<f64> = direction.iter().map(|u| u * (rho + offset)).collect();
            let x_star: Vec<f64> = direction.iter().map(|u| u * rho).collect();
            (
                center,
                vec![1.0; spec.dim],
                x_star,
                0.5 * offset * offset,
                2.0 * rho,
                2.0 * rho + offset,
            )
        }
    };
    let lipschitz = curvature.iter().copied().fold(0.0, f64::max);
    let grad_bound = (grad_bound * grad_bound + spec.sigma * spec.sigma).sqrt();
    let constants = ProblemConstants::new(lipschitz, grad_bound, radius_const, spec.sigma)?;
    Ok(Synthetic {
        objective: Objective::Quadratic(Quadratic {
            center,
            curvature,
            sigma: spec.sigma,
        }),
        projection,
        x_star,
        f_star,
        constants,
        x0: vec![0.0; spec.dim],
    })
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Planted sparse logistic-regression data with power-law feature frequencies,
/// a desk-scale analog of one-hot click-through data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseLogisticSpec {
    pub examples: usize,
    pub features: usize,
    pub nnz_per_row: usize,
    /// Feature `k` is drawn with weight `(k + 1)^-zipf_exponent`.
    pub zipf_exponent: f64,
    /// Standard deviation of the planted weights.
    pub weight_scale: f64,
    pub seed: u64,
}

impl Default for SparseLogisticSpec {
    fn default() -> Self {
        Self {
            examples: 10_000,
            features: 1_000,
            nnz_per_row: 20,
            zipf_exponent: 0.8,
            weight_scale: 1.0,
            seed: 0,
        }
    }
}

pub fn make_sparse_logistic(spec: &SparseLogisticSpec) -> Result<Dataset> {
    if spec.nnz_per_row == 0 || spec.nnz_per_row > spec.features {
        return Err(Error::invalid(
            "nnz_per_row",
            format!("must be in 1..={}", spec.features),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let planted: Vec<f64> = (0..spec.features)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            spec.weight_scale * z
        })
        .collect();
    let mut cdf: Vec<f64> = Vec::with_capacity(spec.features);
    let mut acc = 0.0;
    for k in 0..spec.features {
        acc += (k as f64 + 1.0).powf(-spec.zipf_exponent);
        cdf.push(acc);
    }
    let total = acc;
    // Scale so the planted margin has unit-order variance regardless of nnz.
    let value = 1.0 / (spec.nnz_per_row as f64).sqrt();

    let mut examples = Vec::with_capacity(spec.examples);
    for _ in 0..spec.examples {
        let mut idx: Vec<u64> = Vec::with_capacity(spec.nnz_per_row);
        while idx.len() < spec.nnz_per_row {
            let u = rng.random::<f64>() * total;
            let k = cdf.partition_point(|&c| c < u).min(spec.features - 1) as u64;
            if !idx.contains(&k) {
                idx.push(k);
            }
        }
        idx.sort_unstable();
        let margin: f64 = idx.iter().map(|&k| planted[k as usize] * value).sum();
        let p = 1.0 / (1.0 + (-margin).exp());
        let label = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        let features = SparseVector::new(idx, vec![value; spec.nnz_per_row])?;
        examples.push(Example { label, features });
    }
    Dataset::new(examples, spec.features)
}
