//! Dense Cholesky and LU factorizations with triangular solves for the
//! small systems used by input whitening, the low-rank posterior sampler,
//! and layer inversion (matrix sizes are the latent rank or the data
//! dimension, i.e. single digits).

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor L with A = L·Lᵀ. Errors if A is not
/// numerically positive definite.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidArg(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Numeric(format!(
                        "cholesky: matrix not positive definite at pivot {i} ({s})"
                    )));
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solves L·x = b for lower-triangular L (forward substitution).
pub fn solve_lower(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves Lᵀ·x = b for lower-triangular L (back substitution).
pub fn solve_lower_transpose(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves (L·Lᵀ)·x = b given the Cholesky factor.
pub fn solve_spd(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    solve_lower_transpose(l, &solve_lower(l, b))
}

/// Inverse of a lower-triangular matrix.
pub fn invert_lower(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    for col in 0..n {
        let mut e = Array1::<f64>::zeros(n);
        e[col] = 1.0;
        let x = solve_lower(l, &e);
        for row in 0..n {
            inv[(row, col)] = x[row];
        }
    }
    inv
}

/// LU factorization with partial pivoting of a square matrix.
pub struct Lu {
    lu: Array2<f64>,
    /// Row of the input taken as pivot row `i`.
    perm: Vec<usize>,
    sign: f64,
}

pub fn lu_factor(a: &Array2<f64>) -> Result<Lu> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidArg(format!(
            "lu_factor needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut lu = a.to_owned();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for col in 0..n {
        let mut best = col;
        let mut best_abs = lu[(col, col)].abs();
        for row in (col + 1)..n {
            let v = lu[(row, col)].abs();
            if v > best_abs {
                best = row;
                best_abs = v;
            }
        }
        if best != col {
            for k in 0..n {
                lu.swap((col, k), (best, k));
            }
            perm.swap(col, best);
            sign = -sign;
        }
        let pivot = lu[(col, col)];
        if pivot == 0.0 {
            // Exactly singular; det() still reports 0, solve() refuses.
            continue;
        }
        for row in (col + 1)..n {
            let factor = lu[(row, col)] / pivot;
            lu[(row, col)] = factor;
            for k in (col + 1)..n {
                lu[(row, k)] -= factor * lu[(col, k)];
            }
        }
    }
    Ok(Lu { lu, perm, sign })
}

impl Lu {
    pub fn det(&self) -> f64 {
        let mut d = self.sign;
        for i in 0..self.lu.nrows() {
            d *= self.lu[(i, i)];
        }
        d
    }

    /// Solves A·x = b using the stored factorization.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.lu.nrows();
        debug_assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            for k in 0..i {
                x[i] -= self.lu[(i, k)] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.lu[(i, k)] * x[k];
            }
            let pivot = self.lu[(i, i)];
            if pivot == 0.0 {
                return Err(Error::Numeric("singular linear system".into()));
            }
            x[i] /= pivot;
        }
        Ok(x)
    }
}
