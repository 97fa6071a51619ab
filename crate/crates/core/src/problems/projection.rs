use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{norm, Vector};

/// Feasible set `X` together with its Euclidean projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProjectionSet {
    /// Closed L2 ball. An empty `center` means the origin.
    Ball { center: Vec<f64>, radius: f64 },
    /// Axis-aligned box `[lower, upper]^d`.
    Box { lower: f64, upper: f64 },
    Unconstrained,
}

impl ProjectionSet {
    pub fn ball(radius: f64) -> Result<Self> {
        Self::ball_at(Vec::new(), radius)
    }

    pub fn ball_at(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid("radius", format!("must be positive, got {radius}")));
        }
        Ok(ProjectionSet::Ball { center, radius })
    }

    pub fn boxed(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower <= upper) {
            return Err(Error::invalid("box", format!("invalid bounds [{lower}, {upper}]")));
        }
        Ok(ProjectionSet::Box { lower, upper })
    }

    pub fn is_constrained(&self) -> bool {
        !matches!(self, ProjectionSet::Unconstrained)
    }

    /// Project `x` in place.
    pub fn project_in_place(&self, x: &mut [f64]) {
        match self {
            ProjectionSet::Ball { center, radius } => {
                let c = |i: usize| center.get(i).copied().unwrap_or(0.0);
                let dist = |x: &[f64]| {
                    x.iter()
                        .enumerate()
                        .map(|(i, v)| (v - c(i)) * (v - c(i)))
                        .sum::<f64>()
                        .sqrt()
                };
                let d = dist(x);
                if d > *radius {
                    let original = x.to_vec();
                    let mut scale = radius / d;
                    // Shrink by ulps until the rounded result is inside, so that
                    // projecting again is an exact no-op.
                    loop {
                        for (i, v) in x.iter_mut().enumerate() {
                            *v = c(i) + (original[i] - c(i)) * scale;
                        }
                        if dist(x) <= *radius {
                            break;
                        }
                        scale = f64::from_bits(scale.to_bits() - 1);
                    }
                }
            }
            ProjectionSet::Box { lower, upper } => {
                for v in x.iter_mut() {
                    *v = v.clamp(*lower, *upper);
                }
            }
            ProjectionSet::Unconstrained => {}
        }
    }

    /// Euclidean-closest point of the set.
    pub fn project(&self, x: &Vector, dim: usize) -> Result<Vector> {
        let mut dense = x.to_dense(dim)?;
        self.project_in_place(&mut dense);
        Ok(Vector::Dense(dense))
    }

    /// Membership up to an absolute tolerance.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            ProjectionSet::Ball { center, radius } => {
                let shifted: Vec<f64> = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v - center.get(i).copied().unwrap_or(0.0))
                    .collect();
                norm(&shifted) <= radius + tol
            }
            ProjectionSet::Box { lower, upper } => {
                x.iter().all(|v| *v >= lower - tol && *v <= upper + tol)
            }
            ProjectionSet::Unconstrained => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::dot;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn proj(set: &ProjectionSet, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        set.project_in_place(&mut y);
        y
    }

    #[test]
    fn ball_interior_point_unchanged() {
        let b = ProjectionSet::ball(1.0).unwrap();
        assert_eq!(proj(&b, &[0.3, 0.4]), vec![0.3, 0.4]);
    }

    #[test]
    fn ball_radial_scaling() {
        let b = ProjectionSet::ball(1.0).unwrap();
        let y = proj(&b, &[3.0, 4.0]);
        assert!((y[0] - 0.6).abs() < 1e-15 && (y[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn box_clamps() {
        let b = ProjectionSet::boxed(-1.0, 1.0).unwrap();
        assert_eq!(proj(&b, &[2.0, -0.5]), vec![1.0, -0.5]);
    }

    #[test]
    fn invalid_sets_rejected() {
        assert!(ProjectionSet::ball(0.0).is_err());
        assert!(ProjectionSet::boxed(1.0, -1.0).is_err());
    }

    #[test]
    fn projection_lemma_holds_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sets = [
            ProjectionSet::ball(1.5).unwrap(),
            ProjectionSet::ball_at(vec![0.5, -0.5, 1.0, 0.0], 0.7).unwrap(),
            ProjectionSet::boxed(-0.3, 0.8).unwrap(),
        ];
        for set in &sets {
            for _ in 0..1000 {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
                let raw: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
                let y = proj(set, &raw);
                let px = proj(set, &x);
                let a: Vec<f64> = y.iter().zip(&px).map(|(u, v)| u - v).collect();
                let b: Vec<f64> = x.iter().zip(&px).map(|(u, v)| u - v).collect();
                assert!(dot(&a, &b) <= 1e-12, "{set:?}: {}", dot(&a, &b));
            }
        }
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(x in proptest::collection::vec(-10.0..10.0f64, 5), r in 0.1..5.0f64) {
            for set in [ProjectionSet::ball(r).unwrap(), ProjectionSet::boxed(-r, r / 2.0).unwrap()] {
                let once = proj(&set, &x);
                let twice = proj(&set, &once);
                prop_assert!(set.contains(&once, 0.0));
                prop_assert_eq!(once, twice);
            }
        }
    }
}
