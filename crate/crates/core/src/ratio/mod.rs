//! Log-density-ratio estimation and the separability score.
//!
//! For a candidate pair (i, j) the score is
//!
//! |KL(p₀‖pᵢ) + KL(p₀‖pⱼ) − KL(p₀‖pᵢⱼ)|
//!
//! which is zero when the two perturbations act on disjoint latent factors
//! (the divergences then add) and grows with the violation. Every divergence
//! is taken with P = control samples and Q = condition samples.
//!
//! Two estimator backends are provided: a nearest-neighbor KL estimate
//! ([`knn_kl`]) suitable for low-dimensional data, and a neural ratio model
//! whose clipped log-ratio expectations ([`smile_kl`]) form the estimate.

mod knn;
mod nre;
mod smile;

pub use knn::{knn_kl, DISTANCE_FLOOR};
pub use nre::{
    multiclass_accuracy, nre_loss, nre_loss_grad, nre_train, NreParams, NreTrainConfig,
    RatioModel,
};
pub use smile::smile_kl;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{canonical_pair, Condition, ExperimentDataset, PerturbationId};
use crate::error::Result;
use crate::rng::Rng;

/// Which KL estimator drives the separability score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KlEstimatorChoice {
    Knn { k: usize },
    NreSmile { config: NreTrainConfig, tau: f64 },
}

impl KlEstimatorChoice {
    /// Neighbor count used throughout the experiments.
    pub fn default_knn() -> Self {
        Self::Knn { k: 5 }
    }

    /// Default training configuration with the standard clipping level.
    pub fn default_nre_smile(seed: u64) -> Self {
        Self::NreSmile {
            config: NreTrainConfig {
                seed,
                ..Default::default()
            },
            tau: 5.0,
        }
    }
}

/// Separability score with its three KL components, for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityResult {
    pub score: f64,
    pub kl_i: f64,
    pub kl_j: f64,
    pub kl_ij: f64,
}

/// Scores pairs of one dataset, memoizing per-condition divergences so a
/// full sweep computes each KL(p₀‖p_c) once. With the neural estimator a
/// single model over all conditions is trained at construction and reused
/// for every pair.
pub struct SeparabilityScorer<'a> {
    ds: &'a ExperimentDataset,
    estimator: KlEstimatorChoice,
    model: Option<RatioModel>,
    kls: BTreeMap<Condition, f64>,
}

impl<'a> SeparabilityScorer<'a> {
    pub fn new(
        ds: &'a ExperimentDataset,
        estimator: KlEstimatorChoice,
        rng: &mut Rng,
    ) -> Result<Self> {
        let model = match &estimator {
            KlEstimatorChoice::Knn { .. } => None,
            KlEstimatorChoice::NreSmile { config, .. } => Some(nre_train(ds, config, rng)?),
        };
        Ok(Self {
            ds,
            estimator,
            model,
            kls: BTreeMap::new(),
        })
    }

    /// Trained ratio model, when the neural estimator is in use.
    pub fn model(&self) -> Option<&RatioModel> {
        self.model.as_ref()
    }

    /// KL(p₀ ‖ p_cond), memoized.
    pub fn kl(&mut self, cond: &Condition) -> Result<f64> {
        if let Some(&v) = self.kls.get(cond) {
            return Ok(v);
        }
        let q = self.ds.require(cond)?;
        let p = self.ds.control();
        let v = match &self.estimator {
            KlEstimatorChoice::Knn { k } => knn_kl(p, q, *k)?,
            KlEstimatorChoice::NreSmile { tau, .. } => {
                let model = self.model.as_ref().expect("trained at construction");
                let f_p = model.log_ratios_batch(p, &Condition::Control, cond)?;
                let f_q = model.log_ratios_batch(q, &Condition::Control, cond)?;
                smile_kl(&f_p, &f_q, *tau)?
            }
        };
        self.kls.insert(*cond, v);
        Ok(v)
    }

    pub fn score(&mut self, i: PerturbationId, j: PerturbationId) -> Result<SeparabilityResult> {
        let (i, j) = canonical_pair(i, j)?;
        let kl_i = self.kl(&Condition::Single(i))?;
        let kl_j = self.kl(&Condition::Single(j))?;
        let kl_ij = self.kl(&Condition::Double(i, j))?;
        Ok(SeparabilityResult {
            score: (kl_i + kl_j - kl_ij).abs(),
            kl_i,
            kl_j,
            kl_ij,
        })
    }
}

/// One-shot separability score for a single pair. Sweeps over many pairs
/// should construct a [`SeparabilityScorer`] instead so per-condition work
/// is shared.
pub fn separability_score(
    ds: &ExperimentDataset,
    i: PerturbationId,
    j: PerturbationId,
    estimator: &KlEstimatorChoice,
    rng: &mut Rng,
) -> Result<SeparabilityResult> {
    SeparabilityScorer::new(ds, estimator.clone(), rng)?.score(i, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SampleMatrix;
    use crate::rng::rng_from_seed;
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_2d(n: usize, means: [f64; 2], rng: &mut Rng) -> SampleMatrix {
        let flat: Vec<f64> = (0..n)
            .flat_map(|_| {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                [means[0] + a, means[1] + b]
            })
            .collect();
        SampleMatrix::new(Array2::from_shape_vec((n, 2), flat).unwrap()).unwrap()
    }

    /// Perturbation 0 shifts coordinate 0 by 2, perturbation 1 shifts
    /// coordinate 1 by 2; the double applies both, so the pair is exactly
    /// separable (KLs add: 2 + 2 = 4).
    fn separable_dataset(n: usize, rng: &mut Rng) -> ExperimentDataset {
        ExperimentDataset::new(
            2,
            [
                (Condition::Control, gaussian_2d(n, [0.0, 0.0], rng)),
                (Condition::Single(0), gaussian_2d(n, [2.0, 0.0], rng)),
                (Condition::Single(1), gaussian_2d(n, [0.0, 2.0], rng)),
                (Condition::Double(0, 1), gaussian_2d(n, [2.0, 2.0], rng)),
            ],
        )
        .unwrap()
    }

    /// The double repeats perturbation 0's shift only, so divergences do not
    /// add: |2 + 2 − 2| = 2.
    fn inseparable_dataset(n: usize, rng: &mut Rng) -> ExperimentDataset {
        ExperimentDataset::new(
            2,
            [
                (Condition::Control, gaussian_2d(n, [0.0, 0.0], rng)),
                (Condition::Single(0), gaussian_2d(n, [2.0, 0.0], rng)),
                (Condition::Single(1), gaussian_2d(n, [2.0, 0.0], rng)),
                (Condition::Double(0, 1), gaussian_2d(n, [2.0, 0.0], rng)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn knn_scores_separate_the_two_regimes() {
        let mut rng = rng_from_seed(101);
        let sep = separable_dataset(8000, &mut rng);
        let insep = inseparable_dataset(8000, &mut rng);
        let est = KlEstimatorChoice::default_knn();
        let s = separability_score(&sep, 0, 1, &est, &mut rng).unwrap();
        let t = separability_score(&insep, 0, 1, &est, &mut rng).unwrap();
        assert!(s.score < 0.5, "separable score {}", s.score);
        assert!((t.score - 2.0).abs() < 0.7, "inseparable score {}", t.score);
        assert!(t.score > 4.0 * s.score);
    }

    #[test]
    fn score_is_symmetric_and_reuses_condition_kls() {
        let mut rng = rng_from_seed(103);
        let ds = separable_dataset(2000, &mut rng);
        let mut scorer =
            SeparabilityScorer::new(&ds, KlEstimatorChoice::default_knn(), &mut rng).unwrap();
        let a = scorer.score(0, 1).unwrap();
        let b = scorer.score(1, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.kl_i, scorer.kl(&Condition::Single(0)).unwrap());
    }

    #[test]
    fn missing_double_is_reported() {
        let mut rng = rng_from_seed(107);
        let ds = ExperimentDataset::new(
            2,
            [
                (Condition::Control, gaussian_2d(100, [0.0, 0.0], &mut rng)),
                (Condition::Single(0), gaussian_2d(100, [1.0, 0.0], &mut rng)),
                (Condition::Single(1), gaussian_2d(100, [0.0, 1.0], &mut rng)),
            ],
        )
        .unwrap();
        let err = separability_score(&ds, 0, 1, &KlEstimatorChoice::default_knn(), &mut rng)
            .unwrap_err();
        assert!(err.to_string().contains("double(0,1)"), "{err}");
    }

    #[test]
    fn nre_smile_scores_small_separable_example() {
        let mut rng = rng_from_seed(109);
        let ds = separable_dataset(3000, &mut rng);
        let est = KlEstimatorChoice::NreSmile {
            config: NreTrainConfig {
                hidden_sizes: vec![32, 16],
                epochs: 150,
                batch_size: 512,
                ..Default::default()
            },
            tau: 5.0,
        };
        let mut scorer = SeparabilityScorer::new(&ds, est, &mut rng).unwrap();
        let r = scorer.score(0, 1).unwrap();
        // Latent truth: kl_i = kl_j = 2, kl_ij = 4, score 0.
        assert!(r.kl_i > 1.0 && r.kl_i < 3.0, "kl_i {}", r.kl_i);
        assert!(r.score < 1.0, "score {}", r.score);
    }
}
