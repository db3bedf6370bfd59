//! Sequential discovery loop and its evaluation metrics.
//!
//! Each round refits the posterior on the revealed entries, asks the policy
//! for a batch, reveals the true scores of that batch, and checks the
//! history/remaining partition invariant. Metrics are computed after the
//! fact from the reveal history alone, so any (state, truth) pair can be
//! re-scored against a different relation set or percentile.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{canonical_pair, PerturbationId, RelationSet};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::score::ScoreMatrix;

use super::policy::{select_batch, PolicyConfig, PolicyKind};
use super::posterior::{gibbs_posterior, PosteriorHyperParams};

/// Stream tag separating per-round Gibbs seeds from other derived streams.
const GIBBS_ROUND_STREAM: u64 = 0x4749_4242;

/// Percentile used for recovery when the caller does not pick one.
pub const DEFAULT_TOP_PERCENTILE: f64 = 5.0;

/// Reveal history, the set of still-hidden pairs, and the round counter.
/// History and remaining always partition the full pair set.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryState {
    observed: ScoreMatrix,
    remaining: Vec<(PerturbationId, PerturbationId)>,
    history: Vec<((PerturbationId, PerturbationId), f64)>,
    round: usize,
}

impl DiscoveryState {
    pub fn new(n: usize) -> Result<Self> {
        let observed = ScoreMatrix::new(n)?;
        let remaining = observed.pairs().collect();
        Ok(Self { observed, remaining, history: Vec::new(), round: 0 })
    }

    pub fn n(&self) -> usize {
        self.observed.n()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Revealed entries as a partial score matrix (the posterior's input).
    pub fn observed_matrix(&self) -> &ScoreMatrix {
        &self.observed
    }

    /// Hidden pairs in canonical ascending order.
    pub fn remaining(&self) -> &[(PerturbationId, PerturbationId)] {
        &self.remaining
    }

    /// Reveals in acquisition order with their observed scores.
    pub fn history(&self) -> &[((PerturbationId, PerturbationId), f64)] {
        &self.history
    }

    /// Records one revealed pair. The pair must still be hidden.
    pub fn reveal(&mut self, i: PerturbationId, j: PerturbationId, value: f64) -> Result<()> {
        let pair = canonical_pair(i, j)?;
        let slot = self
            .remaining
            .binary_search(&pair)
            .map_err(|_| {
                Error::InvalidArg(format!(
                    "pair ({},{}) is not awaiting reveal",
                    pair.0, pair.1
                ))
            })?;
        self.observed.set(pair.0, pair.1, value)?;
        self.remaining.remove(slot);
        self.history.push((pair, value));
        Ok(())
    }

    pub fn advance_round(&mut self) {
        self.round += 1;
    }

    /// Verifies the partition invariant: history and remaining are disjoint,
    /// cover every pair, and agree bitwise with the observed matrix.
    pub fn check_invariant(&self) -> Result<()> {
        let total = self.observed.n_pairs();
        if self.history.len() + self.remaining.len() != total {
            return Err(Error::Validation(format!(
                "{} revealed + {} remaining != {total} pairs",
                self.history.len(),
                self.remaining.len()
            )));
        }
        if self.observed.n_observed() != self.history.len() {
            return Err(Error::Validation(
                "observed matrix disagrees with history length".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for &(pair, value) in &self.history {
            if !seen.insert(pair) {
                return Err(Error::Validation(format!(
                    "pair ({},{}) revealed twice",
                    pair.0, pair.1
                )));
            }
            match self.observed.get(pair.0, pair.1) {
                Some(v) if v.to_bits() == value.to_bits() => {}
                _ => {
                    return Err(Error::Validation(format!(
                        "observed matrix lost the value for pair ({},{})",
                        pair.0, pair.1
                    )))
                }
            }
        }
        if self.remaining.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("remaining pairs out of order".into()));
        }
        for &(i, j) in &self.remaining {
            if seen.contains(&(i, j)) || self.observed.get(i, j).is_some() {
                return Err(Error::Validation(format!(
                    "pair ({i},{j}) is both revealed and remaining"
                )));
            }
        }
        Ok(())
    }
}

/// Per-round evaluation series, one entry per completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryMetrics {
    /// Cumulative regret against the oracle that reveals the best remaining
    /// true entries each round.
    pub regret: Vec<f64>,
    /// Fraction of the top-percentile pair set already revealed.
    pub recovery: Vec<f64>,
    /// Revealed pairs that appear in the reference relation set.
    pub known_count: Vec<usize>,
}

/// The ceil(pct/100 · #pairs) top-scoring pairs of a fully observed matrix,
/// ranked by score descending with ties broken toward the lower pair.
pub fn top_percentile_set(
    truth: &ScoreMatrix,
    percentile: f64,
) -> Result<Vec<(PerturbationId, PerturbationId)>> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::InvalidArg(format!(
            "percentile must lie strictly inside (0, 100), got {percentile}"
        )));
    }
    if !truth.is_fully_observed() {
        return Err(Error::InvalidArg(
            "top-percentile ranking needs a fully observed matrix".into(),
        ));
    }
    let mut ranked: Vec<(f64, (PerturbationId, PerturbationId))> =
        truth.observed().map(|(i, j, v)| (v, (i, j))).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let size = (percentile / 100.0 * ranked.len() as f64).ceil() as usize;
    ranked.truncate(size);
    Ok(ranked.into_iter().map(|(_, pair)| pair).collect())
}

/// Scores a finished (or in-progress) run: per-round cumulative regret
/// against the oracle, top-percentile recovery, and known-relation count.
/// The batch size is inferred from the history, which must divide evenly
/// into the completed rounds.
pub fn compute_metrics(
    state: &DiscoveryState,
    truth: &ScoreMatrix,
    relations: &RelationSet,
    percentile: f64,
) -> Result<DiscoveryMetrics> {
    if truth.n() != state.n() {
        return Err(Error::InvalidArg(format!(
            "truth covers {} perturbations, state covers {}",
            truth.n(),
            state.n()
        )));
    }
    if !truth.is_fully_observed() {
        return Err(Error::InvalidArg(
            "metrics need a fully observed truth matrix".into(),
        ));
    }
    if let Some(max_id) = relations.max_id() {
        if max_id >= state.n() {
            return Err(Error::InvalidArg(format!(
                "relation set names perturbation {max_id}, but only {} exist",
                state.n()
            )));
        }
    }
    let rounds = state.round();
    if rounds == 0 || state.history().is_empty() {
        return Err(Error::InvalidArg(
            "metrics need at least one completed round".into(),
        ));
    }
    if state.history().len() % rounds != 0 {
        return Err(Error::Validation(format!(
            "{} reveals do not divide into {rounds} equal rounds",
            state.history().len()
        )));
    }
    let batch = state.history().len() / rounds;

    let top: BTreeSet<(PerturbationId, PerturbationId)> =
        top_percentile_set(truth, percentile)?.into_iter().collect();

    // Oracle cumulative sums: true scores sorted descending.
    let mut sorted: Vec<f64> = truth.observed().map(|(_, _, v)| v).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut metrics = DiscoveryMetrics {
        regret: Vec::with_capacity(rounds),
        recovery: Vec::with_capacity(rounds),
        known_count: Vec::with_capacity(rounds),
    };
    let mut oracle_sum = 0.0;
    let mut policy_sum = 0.0;
    let mut top_hits = 0usize;
    let mut known_hits = 0usize;
    for r in 0..rounds {
        for s in 0..batch {
            let ((i, j), value) = state.history()[r * batch + s];
            oracle_sum += sorted[r * batch + s];
            policy_sum += value;
            if top.contains(&(i, j)) {
                top_hits += 1;
            }
            if relations.contains(i, j) {
                known_hits += 1;
            }
        }
        metrics.regret.push(oracle_sum - policy_sum);
        metrics.recovery.push(top_hits as f64 / top.len() as f64);
        metrics.known_count.push(known_hits);
    }
    Ok(metrics)
}

/// Runs the discovery loop for `rounds` rounds against a fully known
/// environment matrix: refit posterior, select a batch, reveal true entries,
/// repeat. The rng drives only the Random policy; every Gibbs refit draws
/// its seed from the hyperparameter seed and the round index. Returned
/// metrics use the default percentile and an empty relation set; rescore
/// with `compute_metrics` for other references.
pub fn run_discovery(
    env: &ScoreMatrix,
    policy: &PolicyConfig,
    hp: &PosteriorHyperParams,
    rounds: usize,
    rng: &mut Rng,
) -> Result<(DiscoveryState, DiscoveryMetrics)> {
    policy.validate()?;
    hp.validate()?;
    if !env.is_fully_observed() {
        return Err(Error::InvalidArg(
            "discovery needs a fully observed environment matrix".into(),
        ));
    }
    if rounds == 0 {
        return Err(Error::InvalidArg("round count must be positive".into()));
    }
    let total = env.n_pairs();
    if rounds * policy.batch > total {
        return Err(Error::InvalidArg(format!(
            "budget of {rounds} rounds x {} reveals exceeds {total} pairs",
            policy.batch
        )));
    }

    let mut state = DiscoveryState::new(env.n())?;
    for t in 1..=rounds {
        let batch = if policy.kind == PolicyKind::Oracle {
            // Testing hook: take the b best remaining true entries outright.
            let mut ranked: Vec<(f64, (PerturbationId, PerturbationId))> = state
                .remaining()
                .iter()
                .map(|&(i, j)| (env.get(i, j).expect("env fully observed"), (i, j)))
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            ranked.truncate(policy.batch);
            ranked.into_iter().map(|(_, pair)| pair).collect()
        } else {
            let round_hp = PosteriorHyperParams {
                seed: derive_seed(hp.seed, &[GIBBS_ROUND_STREAM, t as u64]),
                ..hp.clone()
            };
            let draws = gibbs_posterior(state.observed_matrix(), &round_hp)?;
            select_batch(policy, &draws, state.remaining(), rng)?
        };
        for (i, j) in batch {
            let value = env.get(i, j).expect("env fully observed");
            state.reveal(i, j, value)?;
        }
        state.advance_round();
        state.check_invariant()?;
        log::info!(
            "round {t}/{rounds}: {} revealed, {} remaining",
            state.history().len(),
            state.remaining().len()
        );
    }
    let metrics = compute_metrics(&state, env, &RelationSet::default(), DEFAULT_TOP_PERCENTILE)?;
    Ok((state, metrics))
}
