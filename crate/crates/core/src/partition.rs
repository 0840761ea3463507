//! State-space partition encoded by hyperplanes and binary signatures.
//!
//! A location is selected in two stages: `delta = H(P x - w)` computes a
//! binary signature from hyperplane side tests (elementwise Heaviside with
//! H(0) = 1), and the signature is matched against each location's signature
//! set. Locations therefore correspond to unions of polyhedral cells, and the
//! sets must be pairwise disjoint so that the selection is unambiguous.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary switching signature, one entry per hyperplane row of `P`.
pub type Signature = Vec<u8>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Hyperplane normals, one row per signature entry (may have zero rows).
    p: DMatrix<f64>,
    /// Hyperplane offsets, one per row of `p`.
    w: DVector<f64>,
    /// Signature sets, one per location.
    signatures: Vec<Vec<Signature>>,
}

impl Partition {
    /// Builds a partition and validates its invariants: `w` matches the row
    /// count of `p`, every signature has one entry per row, every entry is 0
    /// or 1, each location has at least one signature, and no signature is
    /// claimed by two locations.
    pub fn new(
        p: DMatrix<f64>,
        w: DVector<f64>,
        signatures: Vec<Vec<Signature>>,
    ) -> Result<Self> {
        if w.len() != p.nrows() {
            return Err(Error::DimensionMismatch {
                context: "partition offsets",
                expected: p.nrows(),
                actual: w.len(),
            });
        }
        if signatures.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "partition locations",
                expected: 1,
                actual: 0,
            });
        }
        let n_p = p.nrows();
        for set in &signatures {
            if set.is_empty() {
                return Err(Error::DimensionMismatch {
                    context: "location signature set",
                    expected: 1,
                    actual: 0,
                });
            }
            for sig in set {
                if sig.len() != n_p {
                    return Err(Error::DimensionMismatch {
                        context: "signature length",
                        expected: n_p,
                        actual: sig.len(),
                    });
                }
                if sig.iter().any(|&b| b > 1) {
                    return Err(Error::Numerical {
                        context: "partition signatures",
                        detail: "signature entries must be 0 or 1".into(),
                    });
                }
            }
        }
        for (qa, set_a) in signatures.iter().enumerate() {
            for (qb, set_b) in signatures.iter().enumerate().skip(qa + 1) {
                if set_a.iter().any(|s| set_b.contains(s)) {
                    return Err(Error::Numerical {
                        context: "partition signatures",
                        detail: format!("locations {qa} and {qb} share a signature"),
                    });
                }
            }
        }
        Ok(Self { p, w, signatures })
    }

    /// Partition with a single location that matches every signature of a
    /// zero-row hyperplane set, i.e. no switching at all.
    pub fn single_location(n_x: usize) -> Self {
        Self {
            p: DMatrix::zeros(0, n_x),
            w: DVector::zeros(0),
            signatures: vec![vec![Vec::new()]],
        }
    }

    pub fn n_locations(&self) -> usize {
        self.signatures.len()
    }

    pub fn n_hyperplanes(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.p.ncols()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn signatures(&self) -> &[Vec<Signature>] {
        &self.signatures
    }

    /// Evaluates `H(P x - w)` with the convention `H(0) = 1`.
    pub fn localize(&self, x: &DVector<f64>) -> Result<Signature> {
        if x.len() != self.p.ncols() {
            return Err(Error::DimensionMismatch {
                context: "localize state",
                expected: self.p.ncols(),
                actual: x.len(),
            });
        }
        Ok((0..self.p.nrows())
            .map(|i| u8::from(self.p.row(i).transpose().dot(x) - self.w[i] >= 0.0))
            .collect())
    }

    /// Returns the unique location whose signature set contains `delta`.
    pub fn select_location(&self, delta: &Signature, k: usize) -> Result<usize> {
        self.signatures
            .iter()
            .position(|set| set.contains(delta))
            .ok_or_else(|| Error::NoLocation {
                k,
                delta: delta.clone(),
            })
    }

    /// Convenience composition of [`localize`](Self::localize) and
    /// [`select_location`](Self::select_location).
    pub fn locate(&self, x: &DVector<f64>, k: usize) -> Result<(usize, Signature)> {
        let delta = self.localize(x)?;
        let q = self.select_location(&delta, k)?;
        Ok((q, delta))
    }
}
