//! Kernels, median-heuristic bandwidth selection, and the unbiased MMD²
//! two-sample statistic with an optional permutation test.
//!
//! The statistic reported everywhere is squared MMD (the unbiased estimator
//! of Gretton et al.), not its square root; negative values are legitimate
//! under the null and are never clamped so that downstream averages stay
//! unbiased.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::SampleMatrix;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

/// Above this pooled size the median heuristic switches from the exact
/// all-pairs median to a fixed-seed subsample of this many points.
const MEDIAN_EXACT_LIMIT: usize = 4096;

/// Internal seed for the subsampled median path, fixed so bandwidth is a
/// pure function of the pool contents.
const MEDIAN_SUBSAMPLE_SEED: u64 = 0x4d45_4449_414e;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFamily {
    Rbf,
    Matern2_5,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: Bandwidth,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: Bandwidth) -> Result<Self> {
        if let Bandwidth::Fixed(v) = bandwidth {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArg(format!(
                    "kernel bandwidth must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self { family, bandwidth })
    }

    pub fn rbf_median() -> Self {
        Self {
            family: KernelFamily::Rbf,
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }

    pub fn matern_median() -> Self {
        Self {
            family: KernelFamily::Matern2_5,
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MmdResult {
    /// Unbiased squared-MMD estimate; may be negative.
    pub mmd2: f64,
    pub bandwidth_used: f64,
    pub n_x: usize,
    pub n_y: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| {
            let t = u - v;
            t * t
        })
        .sum()
}

/// Kernel value from a squared distance. σ must already be validated > 0.
fn eval_sq(family: KernelFamily, sigma: f64, d2: f64) -> f64 {
    match family {
        KernelFamily::Rbf => (-d2 / (2.0 * sigma * sigma)).exp(),
        KernelFamily::Matern2_5 => {
            let r = d2.sqrt();
            let s = 5.0_f64.sqrt() * r / sigma;
            (1.0 + s + 5.0 * d2 / (3.0 * sigma * sigma)) * (-s).exp()
        }
    }
}

/// Evaluates the kernel at a pair of points. Requires an explicit bandwidth.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    let sigma = match spec.bandwidth {
        Bandwidth::Fixed(v) => v,
        Bandwidth::MedianHeuristic => {
            return Err(Error::InvalidArg(
                "kernel_eval requires an explicit bandwidth, not the median heuristic".into(),
            ))
        }
    };
    if x.len() != y.len() {
        return Err(Error::InvalidArg(format!(
            "kernel_eval dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(eval_sq(spec.family, sigma, sq_dist(x, y)))
}

/// Median pairwise Euclidean distance over distinct index pairs of the pool.
///
/// An even pair count takes the midpoint of the two central distances. A zero
/// median falls back to the smallest nonzero distance; an all-identical pool
/// is an error. Pools above [`MEDIAN_EXACT_LIMIT`] points are reduced with a
/// fixed-seed uniform subsample so the result stays a deterministic function
/// of the pool.
pub fn median_heuristic_bandwidth(pool: &SampleMatrix) -> Result<f64> {
    let n = pool.n_samples();
    if n < 2 {
        return Err(Error::InvalidArg(format!(
            "median heuristic needs at least 2 samples, got {n}"
        )));
    }
    let data = pool.data();
    let flat = data.as_slice().expect("standard layout");
    let d = pool.dim();
    let row = |i: usize| &flat[i * d..(i + 1) * d];

    let indices: Vec<usize> = if n <= MEDIAN_EXACT_LIMIT {
        (0..n).collect()
    } else {
        let mut rng = rng_from_seed(MEDIAN_SUBSAMPLE_SEED);
        let mut picked =
            rand::seq::index::sample(&mut rng, n, MEDIAN_EXACT_LIMIT).into_vec();
        picked.sort_unstable();
        picked
    };

    let m = indices.len();
    let mut dists: Vec<f64> = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in (a + 1)..m {
            dists.push(sq_dist(row(indices[a]), row(indices[b])).sqrt());
        }
    }
    let len = dists.len();
    let mid = len / 2;
    let (lo, pivot, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if len % 2 == 1 {
        *pivot
    } else {
        let below = lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (below + *pivot) / 2.0
    };
    if median > 0.0 {
        return Ok(median);
    }
    let smallest_nonzero = dists
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if smallest_nonzero.is_finite() {
        Ok(smallest_nonzero)
    } else {
        Err(Error::Numeric(
            "degenerate pool: all points identical, no usable bandwidth".into(),
        ))
    }
}

fn check_two_sample(x: &SampleMatrix, y: &SampleMatrix) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::InvalidArg(format!(
            "two-sample dimension mismatch: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    if x.n_samples() < 2 || y.n_samples() < 2 {
        return Err(Error::InvalidArg(format!(
            "unbiased MMD needs at least 2 samples per side, got {} and {}",
            x.n_samples(),
            y.n_samples()
        )));
    }
    Ok(())
}

/// Unbiased squared-MMD with an arbitrary kernel function. Exposed so tests
/// can drive degenerate kernels (constant, linear) directly.
///
/// Parallel row sums are folded in index order, so the result is independent
/// of thread count.
pub fn mmd2_unbiased_with<K>(x: &SampleMatrix, y: &SampleMatrix, kernel: K) -> Result<f64>
where
    K: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    check_two_sample(x, y)?;
    let n = x.n_samples();
    let m = y.n_samples();
    let d = x.dim();
    let xs = x.data().as_slice().expect("standard layout");
    let ys = y.data().as_slice().expect("standard layout");
    let xr = |i: usize| &xs[i * d..(i + 1) * d];
    let yr = |i: usize| &ys[i * d..(i + 1) * d];

    let xx: f64 = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| kernel(xr(i), xr(j))).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let yy: f64 = (0..m)
        .into_par_iter()
        .map(|i| (i + 1..m).map(|j| kernel(yr(i), yr(j))).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let xy: f64 = (0..n)
        .into_par_iter()
        .map(|i| (0..m).map(|j| kernel(xr(i), yr(j))).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum();

    let (nf, mf) = (n as f64, m as f64);
    Ok(2.0 * xx / (nf * (nf - 1.0)) + 2.0 * yy / (mf * (mf - 1.0)) - 2.0 * xy / (nf * mf))
}

fn pooled(x: &SampleMatrix, y: &SampleMatrix) -> SampleMatrix {
    let d = x.dim();
    let mut flat = Vec::with_capacity((x.n_samples() + y.n_samples()) * d);
    flat.extend_from_slice(x.data().as_slice().expect("standard layout"));
    flat.extend_from_slice(y.data().as_slice().expect("standard layout"));
    let rows = flat.len() / d;
    SampleMatrix::new(Array2::from_shape_vec((rows, d), flat).expect("consistent shape"))
        .expect("sources already validated")
}

fn resolve_bandwidth(spec: &KernelSpec, x: &SampleMatrix, y: &SampleMatrix) -> Result<f64> {
    match spec.bandwidth {
        Bandwidth::Fixed(v) => {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArg(format!(
                    "kernel bandwidth must be positive and finite, got {v}"
                )));
            }
            Ok(v)
        }
        Bandwidth::MedianHeuristic => median_heuristic_bandwidth(&pooled(x, y)),
    }
}

/// Unbiased squared-MMD estimate between two sample sets. A median-heuristic
/// bandwidth is resolved on the pooled X∪Y set.
pub fn mmd2_unbiased(x: &SampleMatrix, y: &SampleMatrix, spec: &KernelSpec) -> Result<MmdResult> {
    check_two_sample(x, y)?;
    let sigma = resolve_bandwidth(spec, x, y)?;
    let family = spec.family;
    let mmd2 = mmd2_unbiased_with(x, y, |a, b| eval_sq(family, sigma, sq_dist(a, b)))?;
    Ok(MmdResult {
        mmd2,
        bandwidth_used: sigma,
        n_x: x.n_samples(),
        n_y: y.n_samples(),
    })
}

/// Permutation p-value for the two-sample test: pooled rows are reshuffled
/// `n_permutations` times and the statistic recomputed on each split, with
/// the bandwidth resolved once on the pooled set (which every permutation
/// shares). Returns (1 + #{permuted ≥ observed}) / (1 + n_permutations).
pub fn mmd_permutation_pvalue(
    x: &SampleMatrix,
    y: &SampleMatrix,
    spec: &KernelSpec,
    n_permutations: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if n_permutations < 1 {
        return Err(Error::InvalidArg(
            "permutation test needs at least 1 permutation".into(),
        ));
    }
    check_two_sample(x, y)?;
    let sigma = resolve_bandwidth(spec, x, y)?;
    let resolved = KernelSpec::new(spec.family, Bandwidth::Fixed(sigma))?;
    let observed = mmd2_unbiased(x, y, &resolved)?.mmd2;

    let n = x.n_samples();
    let all = pooled(x, y);
    let d = all.dim();
    let flat = all.data().as_slice().expect("standard layout");
    let total = all.n_samples();
    let mut order: Vec<usize> = (0..total).collect();
    let mut hits = 0usize;
    for _ in 0..n_permutations {
        order.shuffle(rng);
        let take = |ids: &[usize]| {
            let mut v = Vec::with_capacity(ids.len() * d);
            for &i in ids {
                v.extend_from_slice(&flat[i * d..(i + 1) * d]);
            }
            SampleMatrix::new(
                Array2::from_shape_vec((ids.len(), d), v).expect("consistent shape"),
            )
            .expect("rows already validated")
        };
        let px = take(&order[..n]);
        let py = take(&order[n..]);
        if mmd2_unbiased(&px, &py, &resolved)?.mmd2 >= observed {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + n_permutations) as f64)
}
