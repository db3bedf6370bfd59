//! Random invertible MLPs used to warp latent benchmark samples into
//! observation space.
//!
//! Every layer is a square linear map plus bias followed by a leaky ReLU,
//! so the whole network is a diffeomorphism: each layer can be undone by
//! inverting the activation and solving the linear system. Layer weights
//! are drawn at construction and rejected while near-singular, which keeps
//! the inverse well conditioned.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use crate::data::SampleMatrix;
use crate::error::{Error, Result};
use crate::linalg::{lu_factor, Lu};
use crate::rng::Rng;

/// Determinant magnitude below which a candidate layer is considered
/// near-singular and redrawn.
const MIN_ABS_DET: f64 = 1e-9;

/// Redraw attempts per layer before falling back to orthogonalizing the
/// last candidate.
const MAX_LAYER_DRAWS: usize = 100;

/// A fixed, randomly initialized stack of square leaky-ReLU layers.
pub struct RandomMlp {
    weights: Vec<Array2<f64>>,
    biases: Vec<Vec<f64>>,
    factors: Vec<Lu>,
    slope: f64,
    dim: usize,
}

fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_relu_inv(y: f64, slope: f64) -> f64 {
    if y > 0.0 {
        y
    } else {
        y / slope
    }
}

/// Replaces the columns of `w` with an orthonormal basis (modified
/// Gram-Schmidt), giving |det| = 1. Degenerate columns fall back to unit
/// basis vectors re-orthogonalized against the columns already accepted.
fn orthogonalize(w: &mut Array2<f64>) {
    let n = w.nrows();
    for col in 0..n {
        for prev in 0..col {
            let dot: f64 = (0..n).map(|r| w[(r, col)] * w[(r, prev)]).sum();
            for r in 0..n {
                w[(r, col)] -= dot * w[(r, prev)];
            }
        }
        let norm: f64 = (0..n).map(|r| w[(r, col)] * w[(r, col)]).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for r in 0..n {
                w[(r, col)] /= norm;
            }
        } else {
            for r in 0..n {
                w[(r, col)] = if r == col { 1.0 } else { 0.0 };
            }
            for prev in 0..col {
                let dot: f64 = (0..n).map(|r| w[(r, col)] * w[(r, prev)]).sum();
                for r in 0..n {
                    w[(r, col)] -= dot * w[(r, prev)];
                }
            }
            let norm: f64 = (0..n).map(|r| w[(r, col)] * w[(r, col)]).sum::<f64>().sqrt();
            for r in 0..n {
                w[(r, col)] /= norm;
            }
        }
    }
}

impl RandomMlp {
    /// Draws `depth` square layers of size `dim`. Weight and bias entries
    /// are iid normal with variance 1/dim; layers with |det| below the
    /// singularity floor are redrawn. A depth of zero gives the identity.
    pub fn new(dim: usize, depth: usize, slope: f64, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArg("RandomMlp dimension must be positive".into()));
        }
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::InvalidArg(format!(
                "leaky slope must lie in (0, 1), got {slope}"
            )));
        }
        let sd = (1.0 / dim as f64).sqrt();
        let mut weights = Vec::with_capacity(depth);
        let mut biases = Vec::with_capacity(depth);
        let mut factors = Vec::with_capacity(depth);
        for _ in 0..depth {
            let mut w = Array2::<f64>::zeros((dim, dim));
            let mut accepted = false;
            for _ in 0..MAX_LAYER_DRAWS {
                for v in w.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = sd * z;
                }
                let lu = lu_factor(&w).expect("square by construction");
                if lu.det().abs() > MIN_ABS_DET {
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                orthogonalize(&mut w);
            }
            let b: Vec<f64> = (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    sd * z
                })
                .collect();
            factors.push(lu_factor(&w).expect("square by construction"));
            weights.push(w);
            biases.push(b);
        }
        Ok(Self {
            weights,
            biases,
            factors,
            slope,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    fn check_dim(&self, latents: &SampleMatrix) -> Result<()> {
        if latents.dim() != self.dim {
            return Err(Error::InvalidArg(format!(
                "latent dimension {} does not match network dimension {}",
                latents.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Maps each row through the network: x = σ(W_L(…σ(W_1 z + b_1)…) + b_L).
    pub fn apply(&self, latents: &SampleMatrix) -> Result<SampleMatrix> {
        self.check_dim(latents)?;
        let mut x = latents.data().to_owned();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let mut next = x.dot(&w.t());
            for mut row in next.rows_mut() {
                for (v, bias) in row.iter_mut().zip(b) {
                    *v = leaky_relu(*v + bias, self.slope);
                }
            }
            x = next;
        }
        SampleMatrix::new(x)
    }

    /// Reconstructs latents from observations by undoing each layer in
    /// reverse: invert the activation, subtract the bias, solve the linear
    /// system.
    pub fn invert(&self, observations: &SampleMatrix) -> Result<SampleMatrix> {
        self.check_dim(observations)?;
        let mut x = observations.data().to_owned();
        for ((w, b), lu) in self
            .weights
            .iter()
            .zip(&self.biases)
            .zip(&self.factors)
            .rev()
        {
            debug_assert_eq!(w.nrows(), self.dim);
            let mut rhs = vec![0.0; self.dim];
            for mut row in x.rows_mut() {
                for ((r, v), bias) in rhs.iter_mut().zip(row.iter()).zip(b) {
                    *r = leaky_relu_inv(*v, self.slope) - bias;
                }
                let z = lu.solve(&rhs)?;
                for (v, zi) in row.iter_mut().zip(&z) {
                    *v = *zi;
                }
            }
        }
        SampleMatrix::new(x)
    }
}

/// Row-wise application of the diffeomorphism to a latent sample matrix.
pub fn apply_diffeomorphism(mlp: &RandomMlp, latents: &SampleMatrix) -> Result<SampleMatrix> {
    mlp.apply(latents)
}
