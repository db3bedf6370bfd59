//! `synth`: generate a benchmark dataset or a synthetic reward matrix.

use std::path::PathBuf;

use clap::Args;
use pairscout::synth::{
    gen_disjoint_mixture, gen_lowrank_reward, gen_separable_tabular, MixtureSpec, SeparableSpec,
};
use pairscout::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::util;

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SynthKind {
    /// Tabular dataset with two interacting pairs among six perturbations
    Separable,
    /// Mixture-support dataset with two disjoint pairs among seven
    Mixture,
    /// Fully observed low-rank reward matrix (CSV, no samples)
    Lowrank,
}

impl SynthKind {
    fn name(self) -> &'static str {
        match self {
            SynthKind::Separable => "separable",
            SynthKind::Mixture => "mixture",
            SynthKind::Lowrank => "lowrank",
        }
    }
}

#[derive(Args)]
pub struct SynthArgs {
    /// Generator family
    #[arg(long, value_enum)]
    kind: Option<SynthKind>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// JSON config; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Samples per condition (separable, mixture)
    #[arg(long)]
    n: Option<usize>,
    /// Observation-map depth; 0 emits raw latents (separable, mixture)
    #[arg(long)]
    depth: Option<usize>,
    /// Leaky-ReLU negative slope of the observation map (separable)
    #[arg(long)]
    slope: Option<f64>,
    /// Number of perturbations (lowrank)
    #[arg(long)]
    n_perturbations: Option<usize>,
    /// Latent factor rank (lowrank)
    #[arg(long)]
    rank: Option<usize>,
    /// Reward observation noise sd (lowrank)
    #[arg(long)]
    noise_sd: Option<f64>,
}

/// File-config mirror of the flags; every field optional so a config can
/// pin just the values it cares about.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthConfig {
    kind: Option<SynthKind>,
    seed: Option<u64>,
    n: Option<usize>,
    depth: Option<usize>,
    slope: Option<f64>,
    n_perturbations: Option<usize>,
    rank: Option<usize>,
    noise_sd: Option<f64>,
}

/// Fully resolved configuration, written as descriptor.json.
#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum SynthDescriptor {
    Separable {
        seed: u64,
        n_per_class: usize,
        mlp_depth: usize,
        leaky_slope: f64,
    },
    Mixture {
        seed: u64,
        n_per_class: usize,
        mlp_depth: usize,
    },
    Lowrank {
        seed: u64,
        n_perturbations: usize,
        rank: usize,
        noise_sd: f64,
    },
}

fn reject_unused(kind: SynthKind, unused: &[(&str, bool)]) -> Result<()> {
    util::reject_unused(&format!("kind '{}'", kind.name()), unused)
}

pub fn run(args: SynthArgs) -> Result<()> {
    let cfg: SynthConfig = util::load_config(args.config.as_deref())?;
    let kind = args.kind.or(cfg.kind).ok_or_else(|| {
        Error::InvalidArg("--kind is required (or 'kind' in the config)".into())
    })?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let n = args.n.or(cfg.n);
    let depth = args.depth.or(cfg.depth);
    let slope = args.slope.or(cfg.slope);
    let n_perturbations = args.n_perturbations.or(cfg.n_perturbations);
    let rank = args.rank.or(cfg.rank);
    let noise_sd = args.noise_sd.or(cfg.noise_sd);

    util::ensure_dir(&args.out)?;
    let descriptor = match kind {
        SynthKind::Separable => {
            reject_unused(
                kind,
                &[
                    ("--n-perturbations", n_perturbations.is_some()),
                    ("--rank", rank.is_some()),
                    ("--noise-sd", noise_sd.is_some()),
                ],
            )?;
            let defaults = SeparableSpec::default();
            let spec = SeparableSpec {
                n_per_class: n.unwrap_or(defaults.n_per_class),
                mlp_depth: depth.unwrap_or(defaults.mlp_depth),
                leaky_slope: slope.unwrap_or(defaults.leaky_slope),
                seed,
            };
            let ds = gen_separable_tabular(&spec)?;
            write_dataset(&ds, &args.out)?;
            SynthDescriptor::Separable {
                seed,
                n_per_class: spec.n_per_class,
                mlp_depth: spec.mlp_depth,
                leaky_slope: spec.leaky_slope,
            }
        }
        SynthKind::Mixture => {
            reject_unused(
                kind,
                &[
                    ("--slope", slope.is_some()),
                    ("--n-perturbations", n_perturbations.is_some()),
                    ("--rank", rank.is_some()),
                    ("--noise-sd", noise_sd.is_some()),
                ],
            )?;
            let defaults = MixtureSpec::default();
            let spec = MixtureSpec {
                n_per_class: n.unwrap_or(defaults.n_per_class),
                mlp_depth: depth.unwrap_or(defaults.mlp_depth),
                seed,
            };
            let ds = gen_disjoint_mixture(&spec)?;
            write_dataset(&ds, &args.out)?;
            SynthDescriptor::Mixture {
                seed,
                n_per_class: spec.n_per_class,
                mlp_depth: spec.mlp_depth,
            }
        }
        SynthKind::Lowrank => {
            reject_unused(
                kind,
                &[
                    ("--n", n.is_some()),
                    ("--depth", depth.is_some()),
                    ("--slope", slope.is_some()),
                ],
            )?;
            let n_perturbations = n_perturbations.unwrap_or(50);
            let rank = rank.unwrap_or(5);
            let noise_sd = noise_sd.unwrap_or(0.0);
            let matrix = gen_lowrank_reward(n_perturbations, rank, noise_sd, seed)?;
            let path = args.out.join("reward.csv");
            pairscout::io::save_score_matrix(&matrix, &path)?;
            log::info!(
                "wrote {} x {} reward matrix to {}",
                n_perturbations,
                n_perturbations,
                path.display()
            );
            SynthDescriptor::Lowrank {
                seed,
                n_perturbations,
                rank,
                noise_sd,
            }
        }
    };
    util::write_descriptor(&args.out, &descriptor)
}

fn write_dataset(ds: &pairscout::ExperimentDataset, out: &std::path::Path) -> Result<()> {
    let manifest = pairscout::io::save_dataset(ds, out)?;
    log::info!(
        "wrote {} conditions ({} perturbations, dim {}) to {}",
        ds.n_conditions(),
        ds.n_perturbations(),
        ds.dim(),
        manifest.display()
    );
    if let Some(pairs) = ds.ground_truth_pairs() {
        let list: Vec<String> = pairs.iter().map(|(i, j)| format!("{i}-{j}")).collect();
        log::info!("interacting pairs: {}", list.join(", "));
    }
    Ok(())
}
