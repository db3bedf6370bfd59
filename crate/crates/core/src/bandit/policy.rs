//! Acquisition policies over the pair posterior: information-directed
//! sampling plus the Thompson, UCB, uncertainty, and random baselines.
//!
//! All policies consume the same per-pair reward samples Ṙ(a) = uᵢᵀuⱼ
//! evaluated across posterior draws; sampling the columns is the only
//! parallel step and preserves pair order, so selection is deterministic
//! given the draws and the policy seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{canonical_pair, PerturbationId};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::posterior::PosteriorDraws;

/// Default information-ratio exponent.
pub const DEFAULT_LAMBDA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    /// Information-directed sampling: ascending Δ(a)^λ / v(a).
    Ids { lambda: f64 },
    /// Thompson sampling, one posterior draw per slot (cycling when the
    /// batch outruns the draw count).
    Thompson,
    /// Upper confidence bound: mean + β·std of the reward samples.
    Ucb { beta: f64 },
    /// Highest posterior standard deviation first.
    UncertaintySampling,
    /// Seeded uniform sample without replacement.
    Random,
    /// Testing hook: reveals the best remaining true entries. Resolved by
    /// the discovery loop, never by `select_batch`.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Pairs revealed per round.
    pub batch: usize,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind, batch: usize) -> Result<Self> {
        let config = Self { kind, batch };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidArg("batch size must be positive".into()));
        }
        match self.kind {
            PolicyKind::Ids { lambda } => {
                if !(lambda >= 1.0 && lambda.is_finite()) {
                    return Err(Error::InvalidArg(format!(
                        "ids lambda must be finite and at least 1, got {lambda}"
                    )));
                }
            }
            // The beta = 0 edge is admitted on purpose: it reduces UCB to
            // greedy-by-mean, which is a useful reference policy.
            PolicyKind::Ucb { beta } => {
                if !(beta >= 0.0 && beta.is_finite()) {
                    return Err(Error::InvalidArg(format!(
                        "ucb beta must be finite and nonnegative, got {beta}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Reward samples for a candidate pair set: `columns[p][t]` is Ṙ_t(pairs[p]).
/// Pairs are held in canonical ascending order so first-wins argmax scans
/// break ties toward the lowest pair.
struct RewardSamples {
    pairs: Vec<(PerturbationId, PerturbationId)>,
    columns: Vec<Vec<f64>>,
}

impl RewardSamples {
    fn new(
        draws: &PosteriorDraws,
        remaining: &[(PerturbationId, PerturbationId)],
    ) -> Result<Self> {
        if remaining.is_empty() {
            return Err(Error::InvalidArg("remaining pair set is empty".into()));
        }
        let n = draws.n();
        let mut pairs = Vec::with_capacity(remaining.len());
        for &(i, j) in remaining {
            let (i, j) = canonical_pair(i, j)?;
            if j >= n {
                return Err(Error::InvalidArg(format!(
                    "pair ({i},{j}) out of range for {n} perturbations"
                )));
            }
            pairs.push((i, j));
        }
        pairs.sort_unstable();
        if let Some(w) = pairs.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArg(format!(
                "duplicate pair ({},{}) in remaining set",
                w[0].0, w[0].1
            )));
        }
        let k = draws.k();
        let columns: Vec<Vec<f64>> = pairs
            .par_iter()
            .map(|&(i, j)| (0..k).map(|t| draws.reward(t, i, j)).collect())
            .collect();
        Ok(Self { pairs, columns })
    }

    fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    fn k(&self) -> usize {
        self.columns[0].len()
    }

    /// Index of the argmax pair per draw; strict comparison keeps the first
    /// (lowest canonical) pair on ties.
    fn argmax_per_draw(&self) -> Vec<usize> {
        let k = self.k();
        (0..k)
            .map(|t| {
                let mut best = 0;
                for p in 1..self.n_pairs() {
                    if self.columns[p][t] > self.columns[best][t] {
                        best = p;
                    }
                }
                best
            })
            .collect()
    }

    fn mean(&self, p: usize) -> f64 {
        self.columns[p].iter().sum::<f64>() / self.k() as f64
    }

    /// Population standard deviation across draws.
    fn std(&self, p: usize) -> f64 {
        let mean = self.mean(p);
        let var = self.columns[p]
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / self.k() as f64;
        var.sqrt()
    }
}

/// Δ(a): mean over draws of Ṙ(a*) − Ṙ(a), a* the per-draw argmax. Every
/// term is a per-draw max minus a value, so the result is exactly ≥ 0.
fn regret_from(samples: &RewardSamples) -> Vec<f64> {
    let argmax = samples.argmax_per_draw();
    let maxes: Vec<f64> = argmax
        .iter()
        .enumerate()
        .map(|(t, &best)| samples.columns[best][t])
        .collect();
    let k = samples.k() as f64;
    (0..samples.n_pairs())
        .map(|p| {
            maxes
                .iter()
                .zip(&samples.columns[p])
                .map(|(max, v)| max - v)
                .sum::<f64>()
                / k
        })
        .collect()
}

/// v(a): variance of the conditional mean of Ṙ(a) given the argmax pair,
/// i.e. Σ_g p_g (mean_g − mean_all)² over argmax groups g.
fn variance_from(samples: &RewardSamples) -> Vec<f64> {
    let argmax = samples.argmax_per_draw();
    let k = samples.k();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); samples.n_pairs()];
    for (t, &best) in argmax.iter().enumerate() {
        groups[best].push(t);
    }
    (0..samples.n_pairs())
        .map(|p| {
            let col = &samples.columns[p];
            let mean_all = samples.mean(p);
            groups
                .iter()
                .filter(|g| !g.is_empty())
                .map(|g| {
                    let mean_g = g.iter().map(|&t| col[t]).sum::<f64>() / g.len() as f64;
                    let frac = g.len() as f64 / k as f64;
                    frac * (mean_g - mean_all) * (mean_g - mean_all)
                })
                .sum()
        })
        .collect()
}

/// Expected instantaneous regret Δ(a) for each remaining pair, keyed in
/// canonical pair order.
pub fn instant_regret(
    draws: &PosteriorDraws,
    remaining: &[(PerturbationId, PerturbationId)],
) -> Result<Vec<((PerturbationId, PerturbationId), f64)>> {
    let samples = RewardSamples::new(draws, remaining)?;
    let values = regret_from(&samples);
    Ok(samples.pairs.into_iter().zip(values).collect())
}

/// Conditional variance v(a) of each remaining pair's reward given the
/// argmax pair, keyed in canonical pair order.
pub fn conditional_variance(
    draws: &PosteriorDraws,
    remaining: &[(PerturbationId, PerturbationId)],
) -> Result<Vec<((PerturbationId, PerturbationId), f64)>> {
    let samples = RewardSamples::new(draws, remaining)?;
    let values = variance_from(&samples);
    Ok(samples.pairs.into_iter().zip(values).collect())
}

fn select_batch_from(
    policy: &PolicyConfig,
    samples: &RewardSamples,
    rng: &mut Rng,
) -> Result<Vec<(PerturbationId, PerturbationId)>> {
    let b = policy.batch;
    let n_pairs = samples.n_pairs();
    if b > n_pairs {
        return Err(Error::InvalidArg(format!(
            "batch size {b} exceeds {n_pairs} remaining pairs"
        )));
    }
    let picked: Vec<usize> = match &policy.kind {
        PolicyKind::Ids { lambda } => {
            let delta = regret_from(samples);
            let var = variance_from(samples);
            // Ranking classes: Δ=0 pairs first (Ψ:=0), finite ratios next,
            // v=0 with Δ>0 last (Ψ:=+∞); ties fall back to pair order.
            let mut keyed: Vec<(u8, f64, usize)> = (0..n_pairs)
                .map(|p| {
                    if delta[p] == 0.0 {
                        (0, 0.0, p)
                    } else if var[p] > 0.0 {
                        (1, delta[p].powf(*lambda) / var[p], p)
                    } else {
                        (2, f64::INFINITY, p)
                    }
                })
                .collect();
            keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
            keyed.into_iter().take(b).map(|(_, _, p)| p).collect()
        }
        PolicyKind::Thompson => {
            let k = samples.k();
            let mut chosen = vec![false; n_pairs];
            let mut out = Vec::with_capacity(b);
            for s in 0..b {
                let t = s % k;
                let mut best = None;
                for p in 0..n_pairs {
                    if chosen[p] {
                        continue;
                    }
                    match best {
                        None => best = Some(p),
                        Some(q) if samples.columns[p][t] > samples.columns[q][t] => {
                            best = Some(p)
                        }
                        _ => {}
                    }
                }
                let p = best.expect("batch bounded by remaining count");
                chosen[p] = true;
                out.push(p);
            }
            out
        }
        PolicyKind::Ucb { beta } => {
            let scores: Vec<f64> = (0..n_pairs)
                .map(|p| samples.mean(p) + beta * samples.std(p))
                .collect();
            top_b_descending(&scores, b)
        }
        PolicyKind::UncertaintySampling => {
            let scores: Vec<f64> = (0..n_pairs).map(|p| samples.std(p)).collect();
            top_b_descending(&scores, b)
        }
        PolicyKind::Random => rand::seq::index::sample(rng, n_pairs, b).into_vec(),
        PolicyKind::Oracle => {
            return Err(Error::InvalidArg(
                "oracle policy reveals true entries; it is resolved by the discovery loop"
                    .into(),
            ))
        }
    };
    Ok(picked.into_iter().map(|p| samples.pairs[p]).collect())
}

/// Indices of the b largest scores, descending, ties toward the lower index
/// (canonical pair order).
fn top_b_descending(scores: &[f64], b: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &c| scores[c].total_cmp(&scores[a]).then(a.cmp(&c)));
    order.truncate(b);
    order
}

/// Selects `policy.batch` distinct pairs from `remaining` using the
/// posterior draws. Random consumes the rng; every other policy is a pure
/// function of the draws.
pub fn select_batch(
    policy: &PolicyConfig,
    draws: &PosteriorDraws,
    remaining: &[(PerturbationId, PerturbationId)],
    rng: &mut Rng,
) -> Result<Vec<(PerturbationId, PerturbationId)>> {
    policy.validate()?;
    let samples = RewardSamples::new(draws, remaining)?;
    select_batch_from(policy, &samples, rng)
}
