//! Domain types: perturbation conditions, sample containers, relation sets.
//!
//! An experiment observes samples under a control condition, under single
//! perturbations, and under pairs of perturbations. All downstream tests
//! compare these conditional sample distributions, so the types here enforce
//! the structural invariants (canonical pair order, uniform dimension,
//! finite entries) once, at construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Index of a single perturbation, in `[0, n)` for an experiment with `n`
/// perturbations.
pub type PerturbationId = usize;

/// Canonicalizes an unordered pair, rejecting self-pairs.
pub fn canonical_pair(i: PerturbationId, j: PerturbationId) -> Result<(PerturbationId, PerturbationId)> {
    if i == j {
        return Err(Error::InvalidArg(format!("pair ({i},{j}) is a self-pair")));
    }
    Ok(if i < j { (i, j) } else { (j, i) })
}

/// One experimental condition: which perturbations were applied.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub enum Condition {
    Control,
    Single(PerturbationId),
    Double(PerturbationId, PerturbationId),
}

impl Condition {
    /// Builds a `Double`, canonicalizing order. `i == j` is invalid.
    pub fn double(i: PerturbationId, j: PerturbationId) -> Result<Self> {
        let (i, j) = canonical_pair(i, j)?;
        Ok(Condition::Double(i, j))
    }

    pub fn is_control(&self) -> bool {
        matches!(self, Condition::Control)
    }

    /// Largest perturbation id mentioned, if any.
    fn max_id(&self) -> Option<PerturbationId> {
        match *self {
            Condition::Control => None,
            Condition::Single(i) => Some(i),
            Condition::Double(_, j) => Some(j),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Condition::Control => write!(f, "control"),
            Condition::Single(i) => write!(f, "single({i})"),
            Condition::Double(i, j) => write!(f, "double({i},{j})"),
        }
    }
}

/// Dense matrix of samples: rows are samples, columns are feature
/// dimensions. Guaranteed non-empty and all-finite.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    data: Array2<f64>,
}

impl SampleMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Validation(format!(
                "sample matrix must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some((idx, _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite sample value at row {}, column {}",
                idx.0, idx.1
            )));
        }
        Ok(SampleMatrix { data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// A full experiment: sample matrices keyed by condition.
///
/// Constructed through [`ExperimentDataset::new`], which validates that a
/// control condition is present, that every matrix shares one feature
/// dimension, and that all perturbation ids are below `n_perturbations`.
/// Iteration order over conditions is canonical (control, singles
/// ascending, doubles lexicographic) because the map is ordered.
#[derive(Clone, Debug)]
pub struct ExperimentDataset {
    n_perturbations: usize,
    dim: usize,
    samples: BTreeMap<Condition, SampleMatrix>,
    names: Option<Vec<String>>,
    ground_truth_pairs: Option<Vec<(PerturbationId, PerturbationId)>>,
}

impl ExperimentDataset {
    pub fn new(
        n_perturbations: usize,
        samples: impl IntoIterator<Item = (Condition, SampleMatrix)>,
    ) -> Result<Self> {
        let samples: BTreeMap<Condition, SampleMatrix> = samples.into_iter().collect();
        let control = samples
            .get(&Condition::Control)
            .ok_or_else(|| Error::Validation("control condition absent".into()))?;
        let dim = control.dim();
        for (cond, mat) in &samples {
            if mat.dim() != dim {
                return Err(Error::Validation(format!(
                    "condition {cond} has dimension {}, expected {dim}",
                    mat.dim()
                )));
            }
            if let Some(max) = cond.max_id() {
                if max >= n_perturbations {
                    return Err(Error::Validation(format!(
                        "condition {cond} references id {max}, but n_perturbations = {n_perturbations}"
                    )));
                }
            }
        }
        Ok(ExperimentDataset {
            n_perturbations,
            dim,
            samples,
            names: None,
            ground_truth_pairs: None,
        })
    }

    /// Attaches display names for the `n_perturbations` perturbations.
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_perturbations {
            return Err(Error::Validation(format!(
                "{} names supplied for {} perturbations",
                names.len(),
                self.n_perturbations
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    /// Attaches ground-truth interacting pairs (generator metadata).
    pub fn with_ground_truth(mut self, pairs: Vec<(PerturbationId, PerturbationId)>) -> Result<Self> {
        let mut canon = Vec::with_capacity(pairs.len());
        for (i, j) in pairs {
            let (i, j) = canonical_pair(i, j)?;
            if j >= self.n_perturbations {
                return Err(Error::Validation(format!(
                    "ground-truth pair ({i},{j}) out of range for n = {}",
                    self.n_perturbations
                )));
            }
            canon.push((i, j));
        }
        self.ground_truth_pairs = Some(canon);
        Ok(self)
    }

    pub fn n_perturbations(&self) -> usize {
        self.n_perturbations
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn ground_truth_pairs(&self) -> Option<&[(PerturbationId, PerturbationId)]> {
        self.ground_truth_pairs.as_deref()
    }

    pub fn get(&self, cond: &Condition) -> Option<&SampleMatrix> {
        self.samples.get(cond)
    }

    /// Like [`get`](Self::get) but with an error naming the condition.
    pub fn require(&self, cond: &Condition) -> Result<&SampleMatrix> {
        self.samples
            .get(cond)
            .ok_or_else(|| Error::InvalidArg(format!("condition {cond} not in dataset")))
    }

    pub fn control(&self) -> &SampleMatrix {
        self.samples
            .get(&Condition::Control)
            .expect("validated at construction")
    }

    /// Conditions in canonical order.
    pub fn conditions(&self) -> impl Iterator<Item = (&Condition, &SampleMatrix)> {
        self.samples.iter()
    }

    pub fn n_conditions(&self) -> usize {
        self.samples.len()
    }
}

/// Unordered perturbation pairs flagged as known interactions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RelationSet {
    pairs: BTreeSet<(PerturbationId, PerturbationId)>,
}

impl RelationSet {
    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (PerturbationId, PerturbationId)>,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (i, j) in pairs {
            set.insert(canonical_pair(i, j)?);
        }
        Ok(RelationSet { pairs: set })
    }

    pub fn contains(&self, i: PerturbationId, j: PerturbationId) -> bool {
        match canonical_pair(i, j) {
            Ok(p) => self.pairs.contains(&p),
            Err(_) => false,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(PerturbationId, PerturbationId)> {
        self.pairs.iter()
    }

    /// Largest id mentioned, for range checks against a score matrix.
    pub fn max_id(&self) -> Option<PerturbationId> {
        self.pairs.iter().map(|&(_, j)| j).max()
    }
}
