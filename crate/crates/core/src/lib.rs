//! Identifying interacting perturbation pairs from high-dimensional
//! observational snapshots.
//!
//! The library has three layers:
//!
//! * density-ratio machinery ([`ratio`], [`kernels`], [`disjoint`]) that
//!   scores a single candidate pair for non-additive interaction,
//! * synthetic benchmark generators ([`synth`]) with known ground truth,
//! * a sequential experiment-selection loop ([`bandit`]) that decides which
//!   pairs to measure next under a budget.
//!
//! Everything is deterministic given a seed: all randomness flows through
//! [`rng::Rng`] streams derived with [`rng::derive_seed`].

pub mod bandit;
pub mod data;
pub mod disjoint;
pub mod error;
pub mod io;
pub mod kernels;
mod linalg;
pub mod ratio;
pub mod rng;
pub mod score;
pub mod synth;

pub use data::{Condition, ExperimentDataset, PerturbationId, RelationSet, SampleMatrix};
pub use error::{Error, Result};
pub use score::ScoreMatrix;
