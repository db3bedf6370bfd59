//! `eval`: aggregate discovery sweeps across seeds, or join pair scores
//! with the embedding-alignment statistic.

use std::path::{Path, PathBuf};

use clap::Args;
use pairscout::disjoint::{cosine_sq, mean_centered_embeddings, FeatureMap};
use pairscout::io::fmt_f64;
use pairscout::{Condition, Error, Result};
use serde::Serialize;

use crate::util;

#[derive(Args)]
pub struct EvalArgs {
    /// Discovery sweep directories to aggregate (one per policy)
    #[arg(long, num_args = 1..)]
    runs: Option<Vec<PathBuf>>,
    /// Score matrix CSV to join with embedding alignment
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Dataset directory or manifest path (with --scores)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct EvalDescriptor {
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scores: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<String>,
}

/// One sweep's per-seed metric series, all of equal length.
struct Sweep {
    policy: String,
    rounds: usize,
    regret: Vec<Vec<f64>>,
    recovery: Vec<Vec<f64>>,
    known_count: Vec<Vec<f64>>,
}

fn parse_metrics(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut regret = Vec::new();
    let mut recovery = Vec::new();
    let mut known = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != "round,regret,recovery,known_count" {
                return Err(Error::parse(path, 1, "unexpected metrics header"));
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(Error::parse(path, idx + 1, "expected 4 columns"));
        }
        let parse = |cell: &str| -> Result<f64> {
            cell.trim()
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, format!("bad number '{cell}'")))
        };
        regret.push(parse(cells[1])?);
        recovery.push(parse(cells[2])?);
        known.push(parse(cells[3])?);
    }
    if regret.is_empty() {
        return Err(Error::parse(path, 1, "no metric rows"));
    }
    Ok((regret, recovery, known))
}

fn policy_label(dir: &Path) -> Result<String> {
    let path = dir.join("descriptor.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Validation(format!("descriptor {}: {e}", path.display())))?;
    value["policy"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| {
            Error::Validation(format!("descriptor {} has no policy label", path.display()))
        })
}

/// Seed directories of a sweep, ordered by their numeric suffix.
fn seed_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(suffix) = name.strip_prefix("seed-") {
            if let Ok(seed) = suffix.parse::<u64>() {
                found.push((seed, entry.path()));
            }
        }
    }
    found.sort_unstable_by_key(|(seed, _)| *seed);
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn load_sweep(dir: &Path) -> Result<Sweep> {
    let policy = policy_label(dir)?;
    let seeds = seed_dirs(dir)?;
    if seeds.is_empty() {
        return Err(Error::Validation(format!(
            "no seed-* directories under {}",
            dir.display()
        )));
    }
    let mut sweep = Sweep {
        policy,
        rounds: 0,
        regret: Vec::new(),
        recovery: Vec::new(),
        known_count: Vec::new(),
    };
    for seed_dir in &seeds {
        let (regret, recovery, known) = parse_metrics(&seed_dir.join("metrics.csv"))?;
        if sweep.rounds == 0 {
            sweep.rounds = regret.len();
        } else if regret.len() != sweep.rounds {
            return Err(Error::Validation(format!(
                "inconsistent round counts under {}: {} vs {}",
                dir.display(),
                sweep.rounds,
                regret.len()
            )));
        }
        sweep.regret.push(regret);
        sweep.recovery.push(recovery);
        sweep.known_count.push(known);
    }
    Ok(sweep)
}

fn aggregate_rows(out: &mut String, policy: &str, metric: &str, series: &[Vec<f64>]) {
    let rounds = series[0].len();
    for t in 0..rounds {
        let values: Vec<f64> = series.iter().map(|s| s[t]).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.push_str(&format!(
            "{policy},{},{metric},{},{},{}\n",
            t + 1,
            fmt_f64(mean),
            fmt_f64(min),
            fmt_f64(max)
        ));
    }
}

fn run_aggregate(runs: &[PathBuf], out_dir: &Path) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::InvalidArg("no runs found".into()));
    }
    let mut out = String::from("policy,round,metric,mean,min,max\n");
    for dir in runs {
        let sweep = load_sweep(dir)?;
        log::info!(
            "aggregating {} ({} seeds, {} rounds)",
            sweep.policy,
            sweep.regret.len(),
            sweep.rounds
        );
        aggregate_rows(&mut out, &sweep.policy, "regret", &sweep.regret);
        aggregate_rows(&mut out, &sweep.policy, "recovery", &sweep.recovery);
        aggregate_rows(&mut out, &sweep.policy, "known_count", &sweep.known_count);
    }
    pairscout::io::atomic_write(&out_dir.join("aggregated.csv"), out.as_bytes())
}

fn run_cosine(scores: &Path, data: &Path, out_dir: &Path) -> Result<()> {
    let matrix = pairscout::io::load_score_matrix(scores)?;
    let manifest = if data.is_dir() {
        data.join("manifest.json")
    } else {
        data.to_path_buf()
    };
    let ds = pairscout::io::load_dataset(&manifest)?;
    let table = mean_centered_embeddings(&ds, &FeatureMap::Identity)?;
    let mut out = String::from("i,j,score,cosine_sq\n");
    let mut kept = 0usize;
    for (i, j, score) in matrix.observed() {
        let (Some(w_i), Some(w_j)) = (
            table.get(&Condition::Single(i)),
            table.get(&Condition::Single(j)),
        ) else {
            continue;
        };
        let alignment = cosine_sq(w_i, w_j)?;
        out.push_str(&format!(
            "{i},{j},{},{}\n",
            fmt_f64(score),
            fmt_f64(alignment)
        ));
        kept += 1;
    }
    log::info!("joined {kept} scored pairs with embedding alignment");
    pairscout::io::atomic_write(&out_dir.join("cosine.csv"), out.as_bytes())
}

pub fn run(args: EvalArgs) -> Result<()> {
    let aggregate = args.runs.as_deref().filter(|r| !r.is_empty());
    let cosine = match (&args.scores, &args.data) {
        (Some(scores), Some(data)) => Some((scores.clone(), data.clone())),
        (Some(_), None) => {
            return Err(Error::InvalidArg("--scores needs --data".into()));
        }
        (None, Some(_)) => {
            return Err(Error::InvalidArg("--data needs --scores".into()));
        }
        (None, None) => None,
    };
    if aggregate.is_none() && cosine.is_none() {
        return Err(Error::InvalidArg(
            "nothing to do: give --runs and/or --scores with --data".into(),
        ));
    }
    util::ensure_dir(&args.out)?;
    if let Some(runs) = aggregate {
        run_aggregate(runs, &args.out)?;
    }
    if let Some((scores, data)) = &cosine {
        run_cosine(scores, data, &args.out)?;
    }
    let descriptor = EvalDescriptor {
        runs: args
            .runs
            .as_ref()
            .map(|r| r.iter().map(|p| p.display().to_string()).collect()),
        scores: args.scores.as_ref().map(|p| p.display().to_string()),
        data: args.data.as_ref().map(|p| p.display().to_string()),
    };
    util::write_descriptor(&args.out, &descriptor)
}
