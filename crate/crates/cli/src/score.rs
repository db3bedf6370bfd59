//! `score`: sweep an interaction statistic over perturbation pairs of a
//! dataset, writing a score matrix plus per-pair diagnostics.

use std::path::{Path, PathBuf};

use clap::Args;
use pairscout::disjoint::{
    disjointedness_score, embedding_residual_score, mean_centered_embeddings, pair_rng,
    FeatureMap,
};
use pairscout::kernels::KernelSpec;
use pairscout::ratio::{KlEstimatorChoice, NreTrainConfig, SeparabilityScorer};
use pairscout::rng::rng_from_seed;
use pairscout::{Condition, Error, ExperimentDataset, Result};
use serde::{Deserialize, Serialize};

use crate::util;

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Stat {
    /// |KL(p0||pi) + KL(p0||pj) - KL(p0||pij)| with the neighbor estimator
    SeparabilityKnn,
    /// Same score with the trained ratio estimator and clipped lower bound
    SeparabilityNreSmile,
    /// Squared MMD between composition pools, Gaussian kernel
    DisjointednessRbf,
    /// Squared MMD between composition pools, Matern-5/2 kernel
    DisjointednessMatern,
    /// Additivity residual of mean-centered embeddings
    EmbeddingResidual,
}

impl Stat {
    fn name(self) -> &'static str {
        match self {
            Stat::SeparabilityKnn => "separability-knn",
            Stat::SeparabilityNreSmile => "separability-nre-smile",
            Stat::DisjointednessRbf => "disjointedness-rbf",
            Stat::DisjointednessMatern => "disjointedness-matern",
            Stat::EmbeddingResidual => "embedding-residual",
        }
    }
}

#[derive(Args)]
pub struct ScoreArgs {
    /// Dataset directory (containing manifest.json) or manifest path
    #[arg(long)]
    data: PathBuf,
    /// Statistic to compute
    #[arg(long, value_enum)]
    stat: Option<Stat>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// JSON config; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed (pool subsampling, estimator training)
    #[arg(long)]
    seed: Option<u64>,
    /// Neighbor count (separability-knn)
    #[arg(long)]
    k: Option<usize>,
    /// Log-ratio clipping level (separability-nre-smile)
    #[arg(long)]
    tau: Option<f64>,
    /// Training epochs (separability-nre-smile)
    #[arg(long)]
    epochs: Option<usize>,
    /// Pairs to score as i,j (default: every pair with all conditions)
    #[arg(long, num_args = 1..)]
    pairs: Option<Vec<String>>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreConfig {
    stat: Option<Stat>,
    seed: Option<u64>,
    k: Option<usize>,
    tau: Option<f64>,
    epochs: Option<usize>,
}

#[derive(Serialize)]
struct ScoreDescriptor {
    stat: Stat,
    data: String,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    pairs: Vec<String>,
}

#[derive(Serialize)]
struct SeparabilityRow {
    i: usize,
    j: usize,
    score: f64,
    kl_i: f64,
    kl_j: f64,
    kl_ij: f64,
}

#[derive(Serialize)]
struct DisjointednessRow {
    i: usize,
    j: usize,
    mmd2: f64,
    bandwidth_used: f64,
    n_x: usize,
    n_y: usize,
}

#[derive(Serialize)]
struct ResidualRow {
    i: usize,
    j: usize,
    residual: f64,
}

#[derive(Serialize)]
struct Diagnostics<T> {
    stat: Stat,
    pairs: Vec<T>,
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.json")
    } else {
        data.to_path_buf()
    }
}

fn has_all_conditions(ds: &ExperimentDataset, i: usize, j: usize) -> bool {
    ds.get(&Condition::Single(i)).is_some()
        && ds.get(&Condition::Single(j)).is_some()
        && ds.get(&Condition::Double(i, j)).is_some()
}

/// Pairs to score: the requested ones, each checked for presence of both
/// singles and the double, or every fully present pair when none are named.
fn resolve_pairs(
    ds: &ExperimentDataset,
    requested: Option<&[String]>,
) -> Result<Vec<(usize, usize)>> {
    let n = ds.n_perturbations();
    let Some(requested) = requested else {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if has_all_conditions(ds, i, j) {
                    pairs.push((i, j));
                }
            }
        }
        return Ok(pairs);
    };
    let pairs = util::parse_pairs(requested)?;
    let mut missing = Vec::new();
    for &(i, j) in &pairs {
        if j >= n {
            return Err(Error::InvalidArg(format!(
                "pair {i},{j} exceeds the dataset's {n} perturbations"
            )));
        }
        for cond in [Condition::Single(i), Condition::Single(j), Condition::Double(i, j)] {
            if ds.get(&cond).is_none() {
                missing.push(cond.to_string());
            }
        }
    }
    if missing.is_empty() {
        Ok(pairs)
    } else {
        Err(Error::InvalidArg(format!(
            "missing conditions: {}",
            missing.join(", ")
        )))
    }
}

fn write_outputs<T: Serialize>(
    out: &Path,
    stat: Stat,
    n: usize,
    scores: &[(usize, usize, f64)],
    rows: Vec<T>,
) -> Result<()> {
    let mut matrix = pairscout::ScoreMatrix::new(n)?;
    for &(i, j, v) in scores {
        matrix.set(i, j, v)?;
    }
    pairscout::io::save_score_matrix(&matrix, &out.join("scores.csv"))?;
    let diagnostics = Diagnostics { stat, pairs: rows };
    let mut text = serde_json::to_string_pretty(&diagnostics)
        .map_err(|e| Error::InvalidArg(format!("diagnostics: {e}")))?;
    text.push('\n');
    pairscout::io::atomic_write(&out.join("diagnostics.json"), text.as_bytes())
}

pub fn run(args: ScoreArgs) -> Result<()> {
    let cfg: ScoreConfig = util::load_config(args.config.as_deref())?;
    let stat = args.stat.or(cfg.stat).ok_or_else(|| {
        Error::InvalidArg("--stat is required (or 'stat' in the config)".into())
    })?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let k = args.k.or(cfg.k);
    let tau = args.tau.or(cfg.tau);
    let epochs = args.epochs.or(cfg.epochs);
    match stat {
        Stat::SeparabilityKnn => util::reject_unused(
            stat.name(),
            &[("--tau", tau.is_some()), ("--epochs", epochs.is_some())],
        )?,
        Stat::SeparabilityNreSmile => {
            util::reject_unused(stat.name(), &[("--k", k.is_some())])?
        }
        _ => util::reject_unused(
            stat.name(),
            &[
                ("--k", k.is_some()),
                ("--tau", tau.is_some()),
                ("--epochs", epochs.is_some()),
            ],
        )?,
    }

    let ds = pairscout::io::load_dataset(&manifest_path(&args.data))?;
    let pairs = resolve_pairs(&ds, args.pairs.as_deref())?;
    if pairs.is_empty() {
        return Err(Error::Validation(
            "dataset has no pair with both singles and the double present".into(),
        ));
    }
    log::info!("scoring {} pairs with {}", pairs.len(), stat.name());
    util::ensure_dir(&args.out)?;
    let n = ds.n_perturbations();

    match stat {
        Stat::SeparabilityKnn | Stat::SeparabilityNreSmile => {
            let estimator = match stat {
                Stat::SeparabilityKnn => KlEstimatorChoice::Knn {
                    k: k.unwrap_or(5),
                },
                _ => KlEstimatorChoice::NreSmile {
                    config: NreTrainConfig {
                        epochs: epochs.unwrap_or(NreTrainConfig::default().epochs),
                        seed,
                        ..Default::default()
                    },
                    tau: tau.unwrap_or(5.0),
                },
            };
            let mut rng = rng_from_seed(seed);
            let mut scorer = SeparabilityScorer::new(&ds, estimator, &mut rng)?;
            let mut scores = Vec::with_capacity(pairs.len());
            let mut rows = Vec::with_capacity(pairs.len());
            for &(i, j) in &pairs {
                let r = scorer.score(i, j)?;
                scores.push((i, j, r.score));
                rows.push(SeparabilityRow {
                    i,
                    j,
                    score: r.score,
                    kl_i: r.kl_i,
                    kl_j: r.kl_j,
                    kl_ij: r.kl_ij,
                });
                log::info!("pair {i}-{j}: score {:.4}", r.score);
            }
            write_outputs(&args.out, stat, n, &scores, rows)?;
        }
        Stat::DisjointednessRbf | Stat::DisjointednessMatern => {
            let spec = match stat {
                Stat::DisjointednessRbf => KernelSpec::rbf_median(),
                _ => KernelSpec::matern_median(),
            };
            let mut scores = Vec::with_capacity(pairs.len());
            let mut rows = Vec::with_capacity(pairs.len());
            for &(i, j) in &pairs {
                let mut rng = pair_rng(seed, i, j)?;
                let r = disjointedness_score(&ds, i, j, &spec, &mut rng)?;
                scores.push((i, j, r.mmd2));
                rows.push(DisjointednessRow {
                    i,
                    j,
                    mmd2: r.mmd2,
                    bandwidth_used: r.bandwidth_used,
                    n_x: r.n_x,
                    n_y: r.n_y,
                });
                log::info!("pair {i}-{j}: mmd2 {:.6e}", r.mmd2);
            }
            write_outputs(&args.out, stat, n, &scores, rows)?;
        }
        Stat::EmbeddingResidual => {
            let table = mean_centered_embeddings(&ds, &FeatureMap::Identity)?;
            let mut scores = Vec::with_capacity(pairs.len());
            let mut rows = Vec::with_capacity(pairs.len());
            for &(i, j) in &pairs {
                let residual = embedding_residual_score(&table, i, j)?;
                scores.push((i, j, residual));
                rows.push(ResidualRow { i, j, residual });
                log::info!("pair {i}-{j}: residual {residual:.4}");
            }
            write_outputs(&args.out, stat, n, &scores, rows)?;
        }
    }

    let descriptor = ScoreDescriptor {
        stat,
        data: args.data.display().to_string(),
        seed,
        k: match stat {
            Stat::SeparabilityKnn => Some(k.unwrap_or(5)),
            _ => None,
        },
        tau: match stat {
            Stat::SeparabilityNreSmile => Some(tau.unwrap_or(5.0)),
            _ => None,
        },
        epochs: match stat {
            Stat::SeparabilityNreSmile => {
                Some(epochs.unwrap_or(NreTrainConfig::default().epochs))
            }
            _ => None,
        },
        pairs: pairs.iter().map(|(i, j)| format!("{i}-{j}")).collect(),
    };
    util::write_descriptor(&args.out, &descriptor)
}
