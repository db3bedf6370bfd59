//! Low-rank Gaussian posterior over a partially observed symmetric score
//! matrix, sampled by Gibbs sweeps.
//!
//! The model is R ≈ U·Uᵀ with iid Gaussian priors on the entries of the
//! n×m factor U and Gaussian observation noise on revealed entries. Holding
//! every other row fixed, the conditional of one row is Gaussian with
//! closed-form precision and mean, so a sweep over rows is an exact Gibbs
//! step; no gradient machinery is involved and the chain is a deterministic
//! function of its seed.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::PerturbationId;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_lower_transpose, solve_spd};
use crate::rng::{rng_from_seed, Rng};
use crate::score::ScoreMatrix;

/// Hyperparameters of the low-rank posterior and its Gibbs chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorHyperParams {
    /// Factor rank m.
    pub rank: usize,
    /// Prior standard deviation of factor entries.
    pub prior_sd: f64,
    /// Observation noise standard deviation.
    pub noise_sd: f64,
    /// Number of retained draws k.
    pub n_draws: usize,
    /// Sweeps discarded before retaining draws.
    pub burn_in: usize,
    /// Sweeps between retained draws.
    pub thinning: usize,
    pub seed: u64,
}

impl Default for PosteriorHyperParams {
    fn default() -> Self {
        Self {
            rank: 5,
            prior_sd: 1.0,
            noise_sd: 0.1,
            n_draws: 500,
            burn_in: 100,
            thinning: 1,
            seed: 0,
        }
    }
}

impl PosteriorHyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidArg("posterior rank must be positive".into()));
        }
        if !(self.prior_sd > 0.0 && self.prior_sd.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "prior_sd must be positive and finite, got {}",
                self.prior_sd
            )));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "noise_sd must be positive and finite, got {}",
                self.noise_sd
            )));
        }
        if self.n_draws == 0 {
            return Err(Error::InvalidArg("n_draws must be positive".into()));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidArg("thinning must be positive".into()));
        }
        Ok(())
    }
}

/// Retained factor draws; the implied reward draw Ṙ = U·Uᵀ is evaluated
/// lazily entry by entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    draws: Vec<Array2<f64>>,
    n: usize,
    rank: usize,
}

impl PosteriorDraws {
    /// Wraps pre-built factor draws; validates nonemptiness, uniform shape,
    /// and finite entries.
    pub fn from_factors(draws: Vec<Array2<f64>>) -> Result<Self> {
        let first = draws
            .first()
            .ok_or_else(|| Error::InvalidArg("need at least one posterior draw".into()))?;
        let (n, rank) = (first.nrows(), first.ncols());
        if n == 0 || rank == 0 {
            return Err(Error::InvalidArg("factor draws must be non-empty".into()));
        }
        for (t, u) in draws.iter().enumerate() {
            if u.nrows() != n || u.ncols() != rank {
                return Err(Error::InvalidArg(format!(
                    "draw {t} has shape {}x{}, expected {n}x{rank}",
                    u.nrows(),
                    u.ncols()
                )));
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite entry in draw {t}")));
            }
        }
        Ok(Self { draws, n, rank })
    }

    /// Number of retained draws k.
    pub fn k(&self) -> usize {
        self.draws.len()
    }

    /// Number of rows n (perturbations).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.draws
    }

    /// Reward entry of draw `t` for pair `(i, j)`: the inner product of
    /// factor rows i and j of that draw.
    pub fn reward(&self, t: usize, i: PerturbationId, j: PerturbationId) -> f64 {
        let u = &self.draws[t];
        u.row(i).dot(&u.row(j))
    }
}

/// Gaussian conditional of one factor row given all other rows and the
/// observed entries touching it: precision (1/σ_u²)I + (1/σ²)Σ uⱼuⱼᵀ over
/// observed partners j, matching mean. Returns the Cholesky factor of the
/// precision and the mean.
fn row_conditional(
    u: &Array2<f64>,
    obs: &[(usize, f64)],
    hp: &PosteriorHyperParams,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let m = hp.rank;
    let prior_prec = hp.prior_sd.powi(-2);
    let noise_prec = hp.noise_sd.powi(-2);
    let mut lambda = Array2::<f64>::eye(m) * prior_prec;
    let mut rhs = Array1::<f64>::zeros(m);
    for &(j, r) in obs {
        let uj = u.row(j);
        for a in 0..m {
            for b in 0..m {
                lambda[(a, b)] += noise_prec * uj[a] * uj[b];
            }
            rhs[a] += noise_prec * r * uj[a];
        }
    }
    let chol = cholesky(&lambda)?;
    let mean = solve_spd(&chol, &rhs);
    Ok((chol, mean))
}

/// Draws from N(mean, Λ⁻¹) given the Cholesky factor L of Λ: mean + L⁻ᵀz.
fn sample_gaussian(chol: &Array2<f64>, mean: &Array1<f64>, rng: &mut Rng) -> Array1<f64> {
    let m = mean.len();
    let z = Array1::from_iter((0..m).map(|_| {
        let v: f64 = StandardNormal.sample(rng);
        v
    }));
    mean + &solve_lower_transpose(chol, &z)
}

/// Samples the factor posterior given the observed entries. With no
/// observations the chain draws from the prior. Draws are retained after
/// `burn_in` sweeps, one every `thinning` sweeps, until `n_draws` are
/// collected.
pub fn gibbs_posterior(
    observed: &ScoreMatrix,
    hp: &PosteriorHyperParams,
) -> Result<PosteriorDraws> {
    hp.validate()?;
    let n = observed.n();
    let m = hp.rank;
    let mut rng = rng_from_seed(hp.seed);

    // Adjacency: observed partners and values per row.
    let mut obs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, j, r) in observed.observed() {
        if !r.is_finite() {
            return Err(Error::Numeric(format!("non-finite observation at ({i},{j})")));
        }
        obs[i].push((j, r));
        obs[j].push((i, r));
    }

    // Prior initialization.
    let mut u = Array2::<f64>::zeros((n, m));
    for v in u.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = hp.prior_sd * z;
    }

    let mut draws = Vec::with_capacity(hp.n_draws);
    let mut sweep = 0usize;
    while draws.len() < hp.n_draws {
        sweep += 1;
        for i in 0..n {
            let (chol, mean) = row_conditional(&u, &obs[i], hp)?;
            let row = sample_gaussian(&chol, &mean, &mut rng);
            u.row_mut(i).assign(&row);
        }
        if sweep > hp.burn_in && (sweep - hp.burn_in) % hp.thinning == 0 {
            draws.push(u.clone());
        }
    }
    PosteriorDraws::from_factors(draws)
}
