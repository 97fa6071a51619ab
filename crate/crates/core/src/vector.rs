//! Dense and sparse coordinate vectors.
//!
//! Feature indices are `u64` so that very large index spaces can be addressed
//! sparsely without ever materializing a dense buffer. All values are finite
//! `f64`; constructors reject NaN and infinities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse vector with strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<u64>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn new(indices: Vec<u64>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch {
                left: indices.len(),
                right: values.len(),
            });
        }
        for (position, w) in indices.windows(2).enumerate() {
            if w[0] >= w[1] {
                return Err(Error::UnsortedIndices {
                    position: position + 1,
                });
            }
        }
        for (&index, v) in indices.iter().zip(&values) {
            if !v.is_finite() {
                return Err(Error::NonFinite { index });
            }
        }
        Ok(Self { indices, values })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, f64)>) -> Result<Self> {
        let (indices, values) = pairs.into_iter().unzip();
        Self::new(indices, values)
    }

    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn max_index(&self) -> Option<u64> {
        self.indices.last().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Vector {
    Dense(Vec<f64>),
    Sparse(SparseVector),
}

impl Vector {
    pub fn dense(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: index as u64,
            });
        }
        Ok(Vector::Dense(values))
    }

    pub fn sparse(pairs: impl IntoIterator<Item = (u64, f64)>) -> Result<Self> {
        SparseVector::from_pairs(pairs).map(Vector::Sparse)
    }

    pub fn zeros(len: usize) -> Self {
        Vector::Dense(vec![0.0; len])
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Vector::Sparse(_))
    }

    /// Stored entries: the dense length, or the sparse nonzero count.
    pub fn stored_len(&self) -> usize {
        match self {
            Vector::Dense(v) => v.len(),
            Vector::Sparse(s) => s.nnz(),
        }
    }

    /// Iterate over stored `(index, value)` entries in increasing index order.
    pub fn entries(&self) -> Box<dyn Iterator<Item = (u64, f64)> + '_> {
        match self {
            Vector::Dense(v) => Box::new(v.iter().enumerate().map(|(i, &x)| (i as u64, x))),
            Vector::Sparse(s) => Box::new(s.iter()),
        }
    }

    pub fn get(&self, index: u64) -> f64 {
        match self {
            Vector::Dense(v) => v.get(index as usize).copied().unwrap_or(0.0),
            Vector::Sparse(s) => s
                .indices
                .binary_search(&index)
                .map(|p| s.values[p])
                .unwrap_or(0.0),
        }
    }

    pub fn to_dense(&self, len: usize) -> Result<Vec<f64>> {
        match self {
            Vector::Dense(v) => {
                if v.len() != len {
                    return Err(Error::DimensionMismatch {
                        left: v.len(),
                        right: len,
                    });
                }
                Ok(v.clone())
            }
            Vector::Sparse(s) => {
                let mut out = vec![0.0; len];
                for (i, x) in s.iter() {
                    let slot = out
                        .get_mut(i as usize)
                        .ok_or(Error::IndexOutOfRange { index: i, len })?;
                    *slot = x;
                }
                Ok(out)
            }
        }
    }

    /// Sparse representation keeping every stored entry (explicit zeros included).
    pub fn to_sparse(&self) -> SparseVector {
        match self {
            Vector::Dense(v) => SparseVector {
                indices: (0..v.len() as u64).collect(),
                values: v.clone(),
            },
            Vector::Sparse(s) => s.clone(),
        }
    }

    pub fn dot_dense(&self, other: &[f64]) -> f64 {
        self.entries()
            .map(|(i, x)| x * other.get(i as usize).copied().unwrap_or(0.0))
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(self)
    }
}

/// Euclidean norm.
pub fn l2_norm(x: &Vector) -> f64 {
    match x {
        Vector::Dense(v) => norm(v),
        Vector::Sparse(s) => norm(&s.values),
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Returns `a·x + y`.
///
/// Two dense operands must have equal length. A sparse operand combined with a
/// dense one yields a dense result; two sparse operands yield a sparse result
/// whose pattern is the union of both patterns.
pub fn sparse_axpy(a: f64, x: &Vector, y: &Vector) -> Result<Vector> {
    let out = match (x, y) {
        (Vector::Dense(xd), Vector::Dense(yd)) => {
            if xd.len() != yd.len() {
                return Err(Error::DimensionMismatch {
                    left: xd.len(),
                    right: yd.len(),
                });
            }
            Vector::Dense(xd.iter().zip(yd).map(|(xi, yi)| a * xi + yi).collect())
        }
        (Vector::Sparse(xs), Vector::Dense(yd)) => {
            let mut out = yd.clone();
            for (i, xi) in xs.iter() {
                let slot = out.get_mut(i as usize).ok_or(Error::IndexOutOfRange {
                    index: i,
                    len: yd.len(),
                })?;
                *slot += a * xi;
            }
            Vector::Dense(out)
        }
        (Vector::Dense(xd), Vector::Sparse(ys)) => {
            let mut out: Vec<f64> = xd.iter().map(|xi| a * xi).collect();
            for (i, yi) in ys.iter() {
                let slot = out.get_mut(i as usize).ok_or(Error::IndexOutOfRange {
                    index: i,
                    len: xd.len(),
                })?;
                *slot += yi;
            }
            Vector::Dense(out)
        }
        (Vector::Sparse(xs), Vector::Sparse(ys)) => {
            let mut indices = Vec::with_capacity(xs.nnz() + ys.nnz());
            let mut values = Vec::with_capacity(xs.nnz() + ys.nnz());
            let (mut p, mut q) = (0, 0);
            while p < xs.nnz() || q < ys.nnz() {
                let xi = xs.indices.get(p).copied().unwrap_or(u64::MAX);
                let yi = ys.indices.get(q).copied().unwrap_or(u64::MAX);
                if p < xs.nnz() && (q >= ys.nnz() || xi < yi) {
                    indices.push(xi);
                    values.push(a * xs.values[p]);
                    p += 1;
                } else if q < ys.nnz() && (p >= xs.nnz() || yi < xi) {
                    indices.push(yi);
                    values.push(ys.values[q]);
                    q += 1;
                } else {
                    indices.push(xi);
                    values.push(a * xs.values[p] + ys.values[q]);
                    p += 1;
                    q += 1;
                }
            }
            Vector::Sparse(SparseVector { indices, values })
        }
    };
    if let Some((index, _)) = out.entries().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn axpy_zero_scale_is_identity() {
        let x = Vector::dense(vec![9.0, -3.0]).unwrap();
        let y = Vector::dense(vec![1.0, 2.0]).unwrap();
        assert_eq!(sparse_axpy(0.0, &x, &y).unwrap(), y);
    }

    #[test]
    fn axpy_disjoint_sparse_union() {
        let x = Vector::sparse([(0, 1.0)]).unwrap();
        let y = Vector::sparse([(1, 1.0)]).unwrap();
        let z = sparse_axpy(1.0, &x, &y).unwrap();
        assert_eq!(z, Vector::sparse([(0, 1.0), (1, 1.0)]).unwrap());
    }

    #[test]
    fn axpy_dense_arithmetic() {
        let x = Vector::dense(vec![1.0, 1.0]).unwrap();
        let y = Vector::dense(vec![1.0, -2.0]).unwrap();
        assert_eq!(
            sparse_axpy(2.0, &x, &y).unwrap(),
            Vector::Dense(vec![3.0, 0.0])
        );
    }

    #[test]
    fn axpy_dense_length_mismatch() {
        let x = Vector::zeros(2);
        let y = Vector::zeros(3);
        assert!(matches!(
            sparse_axpy(1.0, &x, &y),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn axpy_sparse_index_out_of_dense_range() {
        let x = Vector::sparse([(5, 1.0)]).unwrap();
        let y = Vector::zeros(3);
        assert!(sparse_axpy(1.0, &x, &y).is_err());
    }

    #[test]
    fn norms() {
        assert_eq!(l2_norm(&Vector::zeros(3)), 0.0);
        assert_eq!(l2_norm(&Vector::dense(vec![3.0, 4.0]).unwrap()), 5.0);
        assert_eq!(l2_norm(&Vector::sparse([(7, -2.0)]).unwrap()), 2.0);
    }

    #[test]
    fn constructors_validate() {
        assert!(Vector::dense(vec![1.0, f64::NAN]).is_err());
        assert!(Vector::sparse([(3, 1.0), (3, 2.0)]).is_err());
        assert!(Vector::sparse([(4, 1.0), (2, 2.0)]).is_err());
        assert!(Vector::sparse([(1, f64::INFINITY)]).is_err());
    }

    #[test]
    fn dense_sparse_conversion_is_exact() {
        let s = Vector::sparse([(1, 0.1), (4, -7.25)]).unwrap();
        let d = s.to_dense(6).unwrap();
        assert_eq!(d, vec![0.0, 0.1, 0.0, 0.0, -7.25, 0.0]);
        let back = Vector::Dense(d).to_sparse();
        assert_eq!(back.values()[1], 0.1);
        assert_eq!(back.values()[4], -7.25);
    }

    fn sparse_strategy(len: u64) -> impl Strategy<Value = Vec<(u64, f64)>> {
        proptest::collection::btree_map(0..len, -1e3..1e3f64, 0..(len as usize))
            .prop_map(|m| m.into_iter().collect())
    }

    proptest! {
        #[test]
        fn axpy_matches_dense_evaluation(
            a in -10.0..10.0f64,
            xs in sparse_strategy(40),
            ys in sparse_strategy(40),
        ) {
            let x = Vector::sparse(xs).unwrap();
            let y = Vector::sparse(ys).unwrap();
            let xd = x.to_dense(40).unwrap();
            let yd = y.to_dense(40).unwrap();
            let expected: Vec<f64> = xd.iter().zip(&yd).map(|(p, q)| a * p + q).collect();

            let sparse = sparse_axpy(a, &x, &y).unwrap().to_dense(40).unwrap();
            let mixed = sparse_axpy(a, &x, &Vector::Dense(yd.clone())).unwrap().to_dense(40).unwrap();
            let mixed2 = sparse_axpy(a, &Vector::Dense(xd.clone()), &y).unwrap().to_dense(40).unwrap();
            for i in 0..40 {
                for got in [sparse[i], mixed[i], mixed2[i]] {
                    let ulps = (got.to_bits() as i128 - expected[i].to_bits() as i128).abs();
                    prop_assert!(got == expected[i] || ulps <= 4, "coord {i}: {got} vs {}", expected[i]);
                }
            }
        }
    }
}
