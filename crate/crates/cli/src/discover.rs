//! `discover`: run the batched discovery loop against a fully observed
//! score matrix, one output directory per seed.

use std::path::{Path, PathBuf};

use clap::Args;
use pairscout::bandit::{
    compute_metrics, run_discovery, DiscoveryMetrics, DiscoveryState, PolicyConfig, PolicyKind,
    PosteriorHyperParams, DEFAULT_LAMBDA, DEFAULT_TOP_PERCENTILE,
};
use pairscout::io::fmt_f64;
use pairscout::rng::rng_from_seed;
use pairscout::{Error, RelationSet, Result};
use serde::{Deserialize, Serialize};

use crate::util;

const DEFAULT_BETA: f64 = 1.0;

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Policy {
    /// Information-directed: minimize regret^lambda / variance
    Ids,
    /// Thompson sampling over posterior draws
    Thompson,
    /// Posterior mean plus beta times posterior sd
    Ucb,
    /// Highest posterior sd
    Us,
    /// Uniform over unobserved pairs
    Random,
    /// True best remaining pairs (skyline reference)
    Oracle,
}

#[derive(Args)]
pub struct DiscoverArgs {
    /// Fully observed score matrix CSV driving reveals
    #[arg(long)]
    truth: PathBuf,
    /// Acquisition policy
    #[arg(long, value_enum)]
    policy: Option<Policy>,
    /// Output directory (one seed-<s> subdirectory per seed)
    #[arg(long)]
    out: PathBuf,
    /// JSON config; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rounds to run
    #[arg(long)]
    rounds: Option<usize>,
    /// Pairs revealed per round
    #[arg(long)]
    batch: Option<usize>,
    /// Regret exponent (ids)
    #[arg(long)]
    lambda: Option<f64>,
    /// Exploration weight (ucb)
    #[arg(long)]
    beta: Option<f64>,
    /// First seed
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds to run
    #[arg(long)]
    seeds: Option<u64>,
    /// Known-relation pairs JSON for the known-count metric
    #[arg(long)]
    relations: Option<PathBuf>,
    /// Top percentile defining the recovery target set
    #[arg(long)]
    percentile: Option<f64>,
    /// Posterior factor rank
    #[arg(long)]
    rank: Option<usize>,
    /// Factor prior sd
    #[arg(long)]
    prior_sd: Option<f64>,
    /// Observation noise sd
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Posterior draws kept per round
    #[arg(long)]
    draws: Option<usize>,
    /// Sweeps discarded before collecting draws
    #[arg(long)]
    burn_in: Option<usize>,
    /// Sweeps between kept draws
    #[arg(long)]
    thinning: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiscoverConfig {
    policy: Option<Policy>,
    rounds: Option<usize>,
    batch: Option<usize>,
    lambda: Option<f64>,
    beta: Option<f64>,
    seed: Option<u64>,
    seeds: Option<u64>,
    percentile: Option<f64>,
    rank: Option<usize>,
    prior_sd: Option<f64>,
    noise_sd: Option<f64>,
    draws: Option<usize>,
    burn_in: Option<usize>,
    thinning: Option<usize>,
}

/// Fully resolved run configuration; the per-seed copy pins the seed that
/// produced its directory.
#[derive(Serialize)]
struct DiscoverDescriptor {
    policy: Policy,
    truth: String,
    rounds: usize,
    batch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    seed: u64,
    seeds: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    relations: Option<String>,
    percentile: f64,
    rank: usize,
    prior_sd: f64,
    noise_sd: f64,
    draws: usize,
    burn_in: usize,
    thinning: usize,
}

fn write_history(state: &DiscoveryState, batch: usize, path: &Path) -> Result<()> {
    let mut out = String::from("round,i,j,score\n");
    for (idx, ((i, j), score)) in state.history().iter().enumerate() {
        let round = idx / batch + 1;
        out.push_str(&format!("{round},{i},{j},{}\n", fmt_f64(*score)));
    }
    pairscout::io::atomic_write(path, out.as_bytes())
}

fn write_metrics(metrics: &DiscoveryMetrics, path: &Path) -> Result<()> {
    let mut out = String::from("round,regret,recovery,known_count\n");
    for (idx, ((regret, recovery), known)) in metrics
        .regret
        .iter()
        .zip(&metrics.recovery)
        .zip(&metrics.known_count)
        .enumerate()
    {
        out.push_str(&format!(
            "{},{},{},{known}\n",
            idx + 1,
            fmt_f64(*regret),
            fmt_f64(*recovery)
        ));
    }
    pairscout::io::atomic_write(path, out.as_bytes())
}

pub fn run(args: DiscoverArgs) -> Result<()> {
    let cfg: DiscoverConfig = util::load_config(args.config.as_deref())?;
    let policy = args.policy.or(cfg.policy).ok_or_else(|| {
        Error::InvalidArg("--policy is required (or 'policy' in the config)".into())
    })?;
    let lambda = args.lambda.or(cfg.lambda);
    let beta = args.beta.or(cfg.beta);
    match policy {
        Policy::Ids => util::reject_unused("this policy", &[("--beta", beta.is_some())])?,
        Policy::Ucb => util::reject_unused("this policy", &[("--lambda", lambda.is_some())])?,
        _ => util::reject_unused(
            "this policy",
            &[("--lambda", lambda.is_some()), ("--beta", beta.is_some())],
        )?,
    }
    let rounds = args.rounds.or(cfg.rounds).unwrap_or(50);
    let batch = args.batch.or(cfg.batch).unwrap_or(10);
    let base_seed = args.seed.or(cfg.seed).unwrap_or(0);
    let n_seeds = args.seeds.or(cfg.seeds).unwrap_or(1);
    if n_seeds == 0 {
        return Err(Error::InvalidArg("--seeds must be at least 1".into()));
    }
    let percentile = args
        .percentile
        .or(cfg.percentile)
        .unwrap_or(DEFAULT_TOP_PERCENTILE);
    let hp_defaults = PosteriorHyperParams::default();
    let hp_base = PosteriorHyperParams {
        rank: args.rank.or(cfg.rank).unwrap_or(hp_defaults.rank),
        prior_sd: args.prior_sd.or(cfg.prior_sd).unwrap_or(hp_defaults.prior_sd),
        noise_sd: args.noise_sd.or(cfg.noise_sd).unwrap_or(hp_defaults.noise_sd),
        n_draws: args.draws.or(cfg.draws).unwrap_or(hp_defaults.n_draws),
        burn_in: args.burn_in.or(cfg.burn_in).unwrap_or(hp_defaults.burn_in),
        thinning: args.thinning.or(cfg.thinning).unwrap_or(hp_defaults.thinning),
        seed: base_seed,
    };

    let kind = match policy {
        Policy::Ids => PolicyKind::Ids {
            lambda: lambda.unwrap_or(DEFAULT_LAMBDA),
        },
        Policy::Thompson => PolicyKind::Thompson,
        Policy::Ucb => PolicyKind::Ucb {
            beta: beta.unwrap_or(DEFAULT_BETA),
        },
        Policy::Us => PolicyKind::UncertaintySampling,
        Policy::Random => PolicyKind::Random,
        Policy::Oracle => PolicyKind::Oracle,
    };
    let policy_config = PolicyConfig::new(kind.clone(), batch)?;

    let truth = pairscout::io::load_score_matrix(&args.truth)?;
    let relations = match &args.relations {
        Some(path) => pairscout::io::load_relations(path)?,
        None => RelationSet::default(),
    };

    util::ensure_dir(&args.out)?;
    let descriptor = |seed: u64, seeds: u64| DiscoverDescriptor {
        policy,
        truth: args.truth.display().to_string(),
        rounds,
        batch,
        lambda: match policy {
            Policy::Ids => Some(lambda.unwrap_or(DEFAULT_LAMBDA)),
            _ => None,
        },
        beta: match policy {
            Policy::Ucb => Some(beta.unwrap_or(DEFAULT_BETA)),
            _ => None,
        },
        seed,
        seeds,
        relations: args.relations.as_ref().map(|p| p.display().to_string()),
        percentile,
        rank: hp_base.rank,
        prior_sd: hp_base.prior_sd,
        noise_sd: hp_base.noise_sd,
        draws: hp_base.n_draws,
        burn_in: hp_base.burn_in,
        thinning: hp_base.thinning,
    };

    for seed in base_seed..base_seed + n_seeds {
        let hp = PosteriorHyperParams { seed, ..hp_base.clone() };
        let mut rng = rng_from_seed(seed);
        log::info!("seed {seed}: running {rounds} rounds, batch {batch}");
        let (state, _) = run_discovery(&truth, &policy_config, &hp, rounds, &mut rng)?;
        let metrics = compute_metrics(&state, &truth, &relations, percentile)?;
        let dir = args.out.join(format!("seed-{seed}"));
        util::ensure_dir(&dir)?;
        write_history(&state, batch, &dir.join("history.csv"))?;
        write_metrics(&metrics, &dir.join("metrics.csv"))?;
        util::write_descriptor(&dir, &descriptor(seed, 1))?;
        let last = metrics.regret.last().copied().unwrap_or(f64::NAN);
        log::info!(
            "seed {seed}: final regret {:.4}, recovery {:.3}",
            last,
            metrics.recovery.last().copied().unwrap_or(f64::NAN)
        );
    }
    util::write_descriptor(&args.out, &descriptor(base_seed, n_seeds))
}
