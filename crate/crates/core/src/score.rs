//! Symmetric pairwise score matrix with upper-triangular storage.
//!
//! Scores live only in the strict upper triangle, so `get(i,j) == get(j,i)`
//! holds structurally rather than by discipline. A missing entry means the
//! pair has not been observed; the diagonal does not exist.

use crate::data::{canonical_pair, PerturbationId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    cells: Vec<Option<f64>>,
}

impl ScoreMatrix {
    /// Empty (fully unobserved) matrix over `n` perturbations.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArg(format!(
                "score matrix needs at least 2 perturbations, got {n}"
            )));
        }
        Ok(ScoreMatrix {
            n,
            cells: vec![None; n * (n - 1) / 2],
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_pairs(&self) -> usize {
        self.cells.len()
    }

    fn index(&self, i: PerturbationId, j: PerturbationId) -> Result<usize> {
        let (i, j) = canonical_pair(i, j)?;
        if j >= self.n {
            return Err(Error::InvalidArg(format!(
                "pair ({i},{j}) out of range for n = {}",
                self.n
            )));
        }
        // row-major position of (i, j) within the strict upper triangle
        Ok(i * (2 * self.n - i - 1) / 2 + (j - i - 1))
    }

    pub fn get(&self, i: PerturbationId, j: PerturbationId) -> Option<f64> {
        self.index(i, j).ok().and_then(|ix| self.cells[ix])
    }

    pub fn set(&mut self, i: PerturbationId, j: PerturbationId, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Validation(format!(
                "score for ({i},{j}) is not finite"
            )));
        }
        let ix = self.index(i, j)?;
        self.cells[ix] = Some(value);
        Ok(())
    }

    pub fn clear(&mut self, i: PerturbationId, j: PerturbationId) -> Result<()> {
        let ix = self.index(i, j)?;
        self.cells[ix] = None;
        Ok(())
    }

    /// All pairs in canonical (row-major upper-triangle) order.
    pub fn pairs(&self) -> impl Iterator<Item = (PerturbationId, PerturbationId)> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| (i, j)))
    }

    /// Observed `(i, j, score)` triples in canonical order.
    pub fn observed(&self) -> impl Iterator<Item = (PerturbationId, PerturbationId, f64)> + '_ {
        self.pairs().filter_map(|(i, j)| self.get(i, j).map(|v| (i, j, v)))
    }

    pub fn n_observed(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.cells.iter().all(|c| c.is_some())
    }

    /// Builds a fully observed matrix from a score function.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut m = ScoreMatrix::new(n)?;
        for i in 0..n {
            for j in i + 1..n {
                m.set(i, j, f(i, j))?;
            }
        }
        Ok(m)
    }
}
