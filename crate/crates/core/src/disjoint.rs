//! Disjointedness testing via the mixture two-sample construction, plus
//! embedding-composition diagnostics.
//!
//! When two perturbations act on disjoint targets, the signed density
//! differences of the singles add up to the double's: the equal-weight
//! mixture of control and double equals the equal-weight mixture of the two
//! singles. [`build_mixture_pools`] materializes those two mixtures as
//! balanced sample pools and [`disjointedness_score`] measures their
//! discrepancy with the unbiased squared-MMD estimate; a large value means
//! the pair interacts. [`embedding_residual_score`] is the fixed-feature-map
//! shortcut: under the same null, mean embeddings compose additively, so
//! `‖h̄ᵢⱼ − h̄ᵢ − h̄ⱼ‖₂` plays the same role at a fraction of the cost.

use std::collections::BTreeMap;

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;

use crate::data::{canonical_pair, Condition, ExperimentDataset, PerturbationId, SampleMatrix};
use crate::error::{Error, Result};
use crate::kernels::{mmd2_unbiased, KernelSpec, MmdResult};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::score::ScoreMatrix;

/// Stream tag mixed into per-pair pool seeds, so pool subsampling is
/// decoupled from any other randomness keyed by the same pair.
const POOL_STREAM: u64 = 0x504f_4f4c;

/// RNG for the pool construction of pair `(i, j)` under a sweep-level seed.
///
/// The pair is canonicalized first, so `(i, j)` and `(j, i)` share a stream
/// and a full-matrix sweep scores each pair identically no matter the order
/// or thread the pair is visited on.
pub fn pair_rng(global_seed: u64, i: PerturbationId, j: PerturbationId) -> Result<Rng> {
    let (i, j) = canonical_pair(i, j)?;
    Ok(rng_from_seed(derive_seed(
        global_seed,
        &[POOL_STREAM, i as u64, j as u64],
    )))
}

/// Draws `target` distinct rows, preserving original row order. No RNG draw
/// when the matrix is already at the target size.
fn downsample(m: &SampleMatrix, target: usize, rng: &mut Rng) -> Array2<f64> {
    let n = m.n_samples();
    if n == target {
        return m.data().to_owned();
    }
    let mut idx = rand::seq::index::sample(rng, n, target).into_vec();
    idx.sort_unstable();
    m.data().select(Axis(0), &idx)
}

/// Builds the two mixture pools for the disjointedness null of pair
/// `(i, j)`: pool A is control plus double, pool B is the two singles.
///
/// All four source conditions are first balanced by downsampling to the
/// smallest source size (seeded, without replacement), so each pool is an
/// exact 50/50 mixture of its two sources.
pub fn build_mixture_pools(
    ds: &ExperimentDataset,
    i: PerturbationId,
    j: PerturbationId,
    rng: &mut Rng,
) -> Result<(SampleMatrix, SampleMatrix)> {
    let (i, j) = canonical_pair(i, j)?;
    let sources = [
        Condition::Control,
        Condition::Single(i),
        Condition::Single(j),
        Condition::double(i, j)?,
    ];
    let mut mats = Vec::with_capacity(4);
    for cond in &sources {
        let m = ds.require(cond)?;
        if m.n_samples() < 2 {
            return Err(Error::Validation(format!(
                "condition {cond} has {} samples; pool construction needs at least 2",
                m.n_samples()
            )));
        }
        mats.push(m);
    }
    let target = mats.iter().map(|m| m.n_samples()).min().expect("four sources");
    // Fixed draw order (control, single i, single j, double) keeps the
    // stream aligned between (i, j) and (j, i).
    let control = downsample(mats[0], target, rng);
    let single_i = downsample(mats[1], target, rng);
    let single_j = downsample(mats[2], target, rng);
    let double = downsample(mats[3], target, rng);
    let pool_a = concatenate(Axis(0), &[control.view(), double.view()])
        .expect("uniform dimension validated by the dataset");
    let pool_b = concatenate(Axis(0), &[single_i.view(), single_j.view()])
        .expect("uniform dimension validated by the dataset");
    Ok((SampleMatrix::new(pool_a)?, SampleMatrix::new(pool_b)?))
}

/// Squared-MMD discrepancy between the two disjointedness pools of pair
/// `(i, j)`. Zero (up to estimator noise) when the pair's effects compose
/// disjointly; the bandwidth, if median-heuristic, is resolved on the
/// pooled samples of both pools.
pub fn disjointedness_score(
    ds: &ExperimentDataset,
    i: PerturbationId,
    j: PerturbationId,
    spec: &KernelSpec,
    rng: &mut Rng,
) -> Result<MmdResult> {
    let (pool_a, pool_b) = build_mixture_pools(ds, i, j, rng)?;
    mmd2_unbiased(&pool_a, &pool_b, spec)
}

/// Scores every pair whose singles and double are all present, in parallel,
/// with each pair's pool RNG derived from `global_seed` via [`pair_rng`].
/// Pairs with missing conditions are left unobserved.
pub fn disjointedness_matrix(
    ds: &ExperimentDataset,
    spec: &KernelSpec,
    global_seed: u64,
) -> Result<ScoreMatrix> {
    let n = ds.n_perturbations();
    let mut matrix = ScoreMatrix::new(n)?;
    let pairs: Vec<(PerturbationId, PerturbationId)> = matrix
        .pairs()
        .filter(|&(i, j)| {
            ds.get(&Condition::Double(i, j)).is_some()
                && ds.get(&Condition::Single(i)).is_some()
                && ds.get(&Condition::Single(j)).is_some()
        })
        .collect();
    let scored = pairs
        .par_iter()
        .map(|&(i, j)| {
            let mut rng = pair_rng(global_seed, i, j)?;
            let result = disjointedness_score(ds, i, j, spec, &mut rng)?;
            Ok((i, j, result.mmd2))
        })
        .collect::<Result<Vec<_>>>()?;
    for (i, j, value) in scored {
        matrix.set(i, j, value)?;
    }
    Ok(matrix)
}

/// Per-condition mean embedding shifts: for each non-control condition `c`,
/// the mean feature vector under `c` minus the mean under control.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vectors: BTreeMap<Condition, Vec<f64>>,
    dim: usize,
}

impl EmbeddingTable {
    /// Validates uniform dimension and finite entries.
    pub fn from_vectors(vectors: BTreeMap<Condition, Vec<f64>>) -> Result<Self> {
        let mut dim = None;
        for (cond, v) in &vectors {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::Validation(format!(
                        "embedding for {cond} has dimension {}; expected {d}",
                        v.len()
                    )))
                }
                Some(_) => {}
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite embedding entry for {cond}"
                )));
            }
        }
        let dim = dim.ok_or_else(|| Error::Validation("empty embedding table".into()))?;
        if dim == 0 {
            return Err(Error::Validation("zero-dimensional embeddings".into()));
        }
        Ok(Self { vectors, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, cond: &Condition) -> Option<&[f64]> {
        self.vectors.get(cond).map(Vec::as_slice)
    }

    /// Like [`get`](Self::get) but with an error naming the condition.
    pub fn require(&self, cond: &Condition) -> Result<&[f64]> {
        self.get(cond)
            .ok_or_else(|| Error::InvalidArg(format!("condition {cond} not in embedding table")))
    }

    /// Conditions in canonical order.
    pub fn conditions(&self) -> impl Iterator<Item = &Condition> {
        self.vectors.keys()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Feature map for mean embeddings: raw sample coordinates, or per-sample
/// embeddings computed externally (one row per dataset sample, keyed by the
/// same conditions).
#[derive(Debug, Clone)]
pub enum FeatureMap {
    Identity,
    External(BTreeMap<Condition, SampleMatrix>),
}

fn column_mean(m: &SampleMatrix) -> Vec<f64> {
    let n = m.n_samples() as f64;
    m.data()
        .sum_axis(Axis(0))
        .iter()
        .map(|s| s / n)
        .collect()
}

/// Computes the mean embedding shift of every non-control condition against
/// control under the chosen feature map.
///
/// With [`FeatureMap::External`], each dataset condition must have an
/// embedding matrix with exactly one row per sample of that condition.
pub fn mean_centered_embeddings(
    ds: &ExperimentDataset,
    map: &FeatureMap,
) -> Result<EmbeddingTable> {
    let mean_of = |cond: &Condition| -> Result<Vec<f64>> {
        match map {
            FeatureMap::Identity => Ok(column_mean(ds.require(cond)?)),
            FeatureMap::External(tables) => {
                let emb = tables.get(cond).ok_or_else(|| {
                    Error::Validation(format!("external embeddings missing condition {cond}"))
                })?;
                let n = ds.require(cond)?.n_samples();
                if emb.n_samples() != n {
                    return Err(Error::Validation(format!(
                        "external embeddings for {cond} have {} rows; condition has {n} samples",
                        emb.n_samples()
                    )));
                }
                Ok(column_mean(emb))
            }
        }
    };
    let control_mean = mean_of(&Condition::Control)?;
    let mut vectors = BTreeMap::new();
    for (cond, _) in ds.conditions() {
        if cond.is_control() {
            continue;
        }
        let mean = mean_of(cond)?;
        if mean.len() != control_mean.len() {
            return Err(Error::Validation(format!(
                "embedding for {cond} has dimension {}; control has {}",
                mean.len(),
                control_mean.len()
            )));
        }
        let centered = mean
            .iter()
            .zip(&control_mean)
            .map(|(c, c0)| c - c0)
            .collect();
        vectors.insert(*cond, centered);
    }
    EmbeddingTable::from_vectors(vectors)
}

/// Norm of the additive-composition residual `‖h̄ᵢⱼ − h̄ᵢ − h̄ⱼ‖₂`. Zero when
/// the double's mean embedding shift is exactly the sum of the singles'.
pub fn embedding_residual_score(
    table: &EmbeddingTable,
    i: PerturbationId,
    j: PerturbationId,
) -> Result<f64> {
    let (i, j) = canonical_pair(i, j)?;
    let h_i = table.require(&Condition::Single(i))?;
    let h_j = table.require(&Condition::Single(j))?;
    let h_ij = table.require(&Condition::double(i, j)?)?;
    let sq: f64 = h_ij
        .iter()
        .zip(h_i)
        .zip(h_j)
        .map(|((ij, a), b)| {
            let r = ij - a - b;
            r * r
        })
        .sum();
    Ok(sq.sqrt())
}

/// Residual scores for every pair whose singles and double are in the
/// table; other pairs stay unobserved.
pub fn embedding_residual_matrix(
    table: &EmbeddingTable,
    n_perturbations: usize,
) -> Result<ScoreMatrix> {
    let mut matrix = ScoreMatrix::new(n_perturbations)?;
    let pairs: Vec<(PerturbationId, PerturbationId)> = matrix.pairs().collect();
    for (i, j) in pairs {
        let present = table.get(&Condition::Double(i, j)).is_some()
            && table.get(&Condition::Single(i)).is_some()
            && table.get(&Condition::Single(j)).is_some();
        if present {
            matrix.set(i, j, embedding_residual_score(table, i, j)?)?;
        }
    }
    Ok(matrix)
}

/// Squared cosine similarity of two effect vectors, in `[0, 1]`.
pub fn cosine_sq(w_i: &[f64], w_j: &[f64]) -> Result<f64> {
    if w_i.len() != w_j.len() {
        return Err(Error::InvalidArg(format!(
            "cosine_sq dimension mismatch: {} vs {}",
            w_i.len(),
            w_j.len()
        )));
    }
    let mut dot = 0.0;
    let mut sq_i = 0.0;
    let mut sq_j = 0.0;
    for (a, b) in w_i.iter().zip(w_j) {
        dot += a * b;
        sq_i += a * a;
        sq_j += b * b;
    }
    if sq_i == 0.0 || sq_j == 0.0 {
        return Err(Error::InvalidArg(
            "cosine_sq requires nonzero vectors".into(),
        ));
    }
    // Cauchy-Schwarz bounds the ratio by 1; clamp the fp overshoot.
    Ok((dot * dot / (sq_i * sq_j)).min(1.0))
}

/// Severity proxy: `Σ_k w_k · sign(w_ref,k)` with `sign(0) = 0`. With
/// `w_ref = w` this is the ℓ₁ norm; in general it sums `w` along the
/// orientation of a reference effect.
pub fn severity(w: &[f64], w_ref: &[f64]) -> Result<f64> {
    if w.len() != w_ref.len() {
        return Err(Error::InvalidArg(format!(
            "severity dimension mismatch: {} vs {}",
            w.len(),
            w_ref.len()
        )));
    }
    Ok(w
        .iter()
        .zip(w_ref)
        .map(|(a, r)| {
            let sign = if *r > 0.0 {
                1.0
            } else if *r < 0.0 {
                -1.0
            } else {
                0.0
            };
            a * sign
        })
        .sum())
}
