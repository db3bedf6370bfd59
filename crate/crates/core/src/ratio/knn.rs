//! K-nearest-neighbor KL divergence estimator.
//!
//! For samples P = {p_1..p_n} and Q = {q_1..q_m} in d dimensions,
//!
//! KL(P‖Q) ≈ (d/n) Σ_i log(ν_k(i) / ρ_k(i)) + log(m / (n−1))
//!
//! where ρ_k(i) is the distance from p_i to its k-th nearest neighbor within
//! P∖{p_i} and ν_k(i) the k-th nearest within Q. Neighbor searches run on a
//! kd-tree, so a call is O((n+m) log(n+m)) for fixed dimension.

use rayon::prelude::*;

use crate::data::SampleMatrix;
use crate::error::{Error, Result};

/// Distances are floored here before the log so coincident points cannot
/// produce infinities.
pub const DISTANCE_FLOOR: f64 = 1e-12;

const LEAF_SIZE: usize = 16;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| {
            let t = u - v;
            t * t
        })
        .sum()
}

/// Static kd-tree over a flat row-major point buffer. Median splits on
/// cycling axes; subtree layout is implicit in the permutation (the middle
/// element of a range is its split point).
struct KdTree<'a> {
    pts: &'a [f64],
    dim: usize,
    perm: Vec<u32>,
}

/// Sorted ascending squared-distance list of at most k entries.
struct BestK {
    k: usize,
    d2: Vec<f64>,
}

impl BestK {
    fn new(k: usize) -> Self {
        Self {
            k,
            d2: Vec::with_capacity(k),
        }
    }

    fn worst(&self) -> f64 {
        if self.d2.len() < self.k {
            f64::INFINITY
        } else {
            *self.d2.last().expect("k >= 1")
        }
    }

    fn insert(&mut self, v: f64) {
        if v >= self.worst() {
            return;
        }
        let pos = self.d2.partition_point(|&x| x <= v);
        if self.d2.len() == self.k {
            self.d2.pop();
        }
        self.d2.insert(pos, v);
    }
}

impl<'a> KdTree<'a> {
    fn build(pts: &'a [f64], dim: usize) -> Self {
        let n = pts.len() / dim;
        let mut perm: Vec<u32> = (0..n as u32).collect();
        Self::build_rec(pts, dim, &mut perm, 0);
        Self { pts, dim, perm }
    }

    fn build_rec(pts: &[f64], dim: usize, perm: &mut [u32], depth: usize) {
        if perm.len() <= LEAF_SIZE {
            return;
        }
        let axis = depth % dim;
        let mid = perm.len() / 2;
        perm.select_nth_unstable_by(mid, |&a, &b| {
            let ca = pts[a as usize * dim + axis];
            let cb = pts[b as usize * dim + axis];
            ca.total_cmp(&cb).then(a.cmp(&b))
        });
        let (left, rest) = perm.split_at_mut(mid);
        Self::build_rec(pts, dim, left, depth + 1);
        Self::build_rec(pts, dim, &mut rest[1..], depth + 1);
    }

    fn point(&self, idx: u32) -> &[f64] {
        let i = idx as usize * self.dim;
        &self.pts[i..i + self.dim]
    }

    /// Distance (not squared) from `q` to its k-th nearest neighbor among
    /// stored points, optionally excluding one index.
    fn kth_dist(&self, q: &[f64], k: usize, skip: Option<u32>) -> f64 {
        debug_assert!(self.perm.len() >= k + usize::from(skip.is_some()));
        let mut best = BestK::new(k);
        self.query_rec(q, skip, &self.perm, 0, &mut best);
        best.worst().sqrt()
    }

    fn query_rec(&self, q: &[f64], skip: Option<u32>, perm: &[u32], depth: usize, best: &mut BestK) {
        if perm.len() <= LEAF_SIZE {
            for &p in perm {
                if Some(p) != skip {
                    best.insert(sq_dist(q, self.point(p)));
                }
            }
            return;
        }
        let axis = depth % self.dim;
        let mid = perm.len() / 2;
        let pivot = perm[mid];
        if Some(pivot) != skip {
            best.insert(sq_dist(q, self.point(pivot)));
        }
        let delta = q[axis] - self.pts[pivot as usize * self.dim + axis];
        let (near, far) = if delta <= 0.0 {
            (&perm[..mid], &perm[mid + 1..])
        } else {
            (&perm[mid + 1..], &perm[..mid])
        };
        self.query_rec(q, skip, near, depth + 1, best);
        if delta * delta < best.worst() {
            self.query_rec(q, skip, far, depth + 1, best);
        }
    }
}

/// KNN estimate of KL(P‖Q). Requires more than k samples on each side.
pub fn knn_kl(p: &SampleMatrix, q: &SampleMatrix, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidArg("knn_kl needs k >= 1".into()));
    }
    if p.dim() != q.dim() {
        return Err(Error::InvalidArg(format!(
            "knn_kl dimension mismatch: {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    let (n, m) = (p.n_samples(), q.n_samples());
    if n <= k || m <= k {
        return Err(Error::InvalidArg(format!(
            "knn_kl needs more than k={k} samples per side, got {n} and {m}"
        )));
    }
    let d = p.dim();
    let ps = p.data().as_slice().expect("standard layout");
    let qs = q.data().as_slice().expect("standard layout");
    let ptree = KdTree::build(ps, d);
    let qtree = KdTree::build(qs, d);

    let logs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = &ps[i * d..(i + 1) * d];
            let rho = ptree.kth_dist(x, k, Some(i as u32)).max(DISTANCE_FLOOR);
            let nu = qtree.kth_dist(x, k, None).max(DISTANCE_FLOOR);
            (nu / rho).ln()
        })
        .collect();
    let total: f64 = logs.iter().sum();
    Ok((d as f64 / n as f64) * total + (m as f64 / (n - 1) as f64).ln())
}
