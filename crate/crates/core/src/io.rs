//! File formats: dataset manifests, sample CSVs, score CSVs, relation lists.
//!
//! All floating-point output uses 17 significant digits, which round-trips
//! every f64 bit-exactly, and all writes go through a temp-file-plus-rename
//! so concurrent readers never observe a partial file.
//!
//! A dataset on disk is a JSON manifest naming one headerless CSV of samples
//! per condition:
//!
//! ```json
//! {
//!   "n_perturbations": 2,
//!   "dim": 3,
//!   "conditions": [
//!     {"kind": "control", "file": "control.csv"},
//!     {"kind": "single", "i": 0, "file": "s0.csv"},
//!     {"kind": "double", "i": 0, "j": 1, "file": "d0-1.csv"}
//!   ],
//!   "names": ["geneA", "geneB"],
//!   "ground_truth_pairs": [[0, 1]]
//! }
//! ```
//!
//! `names` and `ground_truth_pairs` are optional; CSV paths are relative to
//! the manifest's directory.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Condition, ExperimentDataset, RelationSet, SampleMatrix};
use crate::error::{Error, Result};
use crate::score::ScoreMatrix;

/// Formats an f64 with 17 significant digits (exact round-trip).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(path, line, format!("not a decimal number: {s:?}")))
}

static WRITE_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `contents` to `path` atomically: a unique temp file in the same
/// directory is written, flushed, then renamed over the target.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let stamp = WRITE_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(
        ".{}.tmp-{}-{stamp}",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default(),
        std::process::id(),
    ));
    let io = |e| Error::io(path, e);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(contents).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

// ---------------------------------------------------------------------------
// Sample CSVs
// ---------------------------------------------------------------------------

pub fn save_samples(matrix: &SampleMatrix, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in matrix.data().rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&fmt_f64(*v));
            first = false;
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn load_samples(path: &Path) -> Result<SampleMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| parse_f64(cell, path, ln + 1))
            .collect::<Result<_>>()?;
        if let Some(prev) = rows.first() {
            if row.len() != prev.len() {
                return Err(Error::parse(
                    path,
                    ln + 1,
                    format!("row has {} columns, expected {}", row.len(), prev.len()),
                ));
            }
        }
        if let Some(col) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(
                path,
                ln + 1,
                format!("non-finite value in column {col}"),
            ));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 0, "no sample rows"));
    }
    let dim = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let data = Array2::from_shape_vec((flat.len() / dim, dim), flat)
        .expect("shape follows from row validation");
    SampleMatrix::new(data)
}

// ---------------------------------------------------------------------------
// Dataset manifests
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestCondition {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    i: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    j: Option<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    n_perturbations: usize,
    dim: usize,
    conditions: Vec<ManifestCondition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ground_truth_pairs: Option<Vec<(usize, usize)>>,
}

fn condition_from_manifest(mc: &ManifestCondition, path: &Path) -> Result<Condition> {
    let need = |field: Option<usize>, name: &str| {
        field.ok_or_else(|| {
            Error::Validation(format!(
                "manifest {}: condition kind {:?} missing field {name}",
                path.display(),
                mc.kind
            ))
        })
    };
    match mc.kind.as_str() {
        "control" => Ok(Condition::Control),
        "single" => Ok(Condition::Single(need(mc.i, "i")?)),
        "double" => Condition::double(need(mc.i, "i")?, need(mc.j, "j")?),
        other => Err(Error::Validation(format!(
            "manifest {}: unknown condition kind {other:?}",
            path.display()
        ))),
    }
}

fn condition_to_manifest(cond: &Condition, file: String) -> ManifestCondition {
    let (kind, i, j) = match *cond {
        Condition::Control => ("control", None, None),
        Condition::Single(i) => ("single", Some(i), None),
        Condition::Double(i, j) => ("double", Some(i), Some(j)),
    };
    ManifestCondition {
        kind: kind.to_string(),
        i,
        j,
        file,
    }
}

/// Conventional CSV file name for a condition.
pub fn condition_file_name(cond: &Condition) -> String {
    match *cond {
        Condition::Control => "control.csv".to_string(),
        Condition::Single(i) => format!("s{i}.csv"),
        Condition::Double(i, j) => format!("d{i}-{j}.csv"),
    }
}

/// Loads a dataset from a JSON manifest (see module docs for the format).
pub fn load_dataset(manifest_path: &Path) -> Result<ExperimentDataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        Error::Validation(format!("manifest {}: {e}", manifest_path.display()))
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::with_capacity(manifest.conditions.len());
    for mc in &manifest.conditions {
        let cond = condition_from_manifest(mc, manifest_path)?;
        let samples = load_samples(&base.join(&mc.file))?;
        if samples.dim() != manifest.dim {
            return Err(Error::Validation(format!(
                "condition {cond} ({}) has dimension {}, manifest declares {}",
                mc.file,
                samples.dim(),
                manifest.dim
            )));
        }
        entries.push((cond, samples));
    }
    let mut ds = ExperimentDataset::new(manifest.n_perturbations, entries)?;
    if let Some(names) = manifest.names {
        ds = ds.with_names(names)?;
    }
    if let Some(pairs) = manifest.ground_truth_pairs {
        ds = ds.with_ground_truth(pairs)?;
    }
    Ok(ds)
}

/// Writes the dataset into `dir` as `manifest.json` plus one CSV per
/// condition, returning the manifest path.
pub fn save_dataset(ds: &ExperimentDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut conditions = Vec::with_capacity(ds.n_conditions());
    for (cond, samples) in ds.conditions() {
        let file = condition_file_name(cond);
        save_samples(samples, &dir.join(&file))?;
        conditions.push(condition_to_manifest(cond, file));
    }
    let manifest = Manifest {
        n_perturbations: ds.n_perturbations(),
        dim: ds.dim(),
        conditions,
        names: ds.names().map(<[String]>::to_vec),
        ground_truth_pairs: ds.ground_truth_pairs().map(<[(usize, usize)]>::to_vec),
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)
        .expect("manifest serialization cannot fail");
    text.push('\n');
    atomic_write(&path, text.as_bytes())?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Score matrix CSV
// ---------------------------------------------------------------------------

/// Writes a score matrix: a header row of the `n` indices, then one row per
/// perturbation with upper-triangle cells populated and everything else
/// blank.
pub fn save_score_matrix(m: &ScoreMatrix, path: &Path) -> Result<()> {
    let n = m.n();
    let mut out = String::new();
    out.push_str(
        &(0..n)
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    for i in 0..n {
        let row: Vec<String> = (0..n)
            .map(|j| {
                if j > i {
                    m.get(i, j).map(fmt_f64).unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Reads a score matrix written by [`save_score_matrix`]. Values anywhere in
/// the square are accepted; a pair observed in both triangles must agree
/// exactly, and diagonal values are rejected.
pub fn load_score_matrix(path: &Path) -> Result<ScoreMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 0, "empty score file"))?;
    let n = header.split(',').count();
    for (col, cell) in header.split(',').enumerate() {
        let parsed: usize = cell.trim().parse().map_err(|_| {
            Error::parse(path, 1, format!("header cell {col} is not an index: {cell:?}"))
        })?;
        if parsed != col {
            return Err(Error::parse(
                path,
                1,
                format!("header cell {col} is {parsed}, expected {col}"),
            ));
        }
    }
    let mut m = ScoreMatrix::new(n)?;
    let mut seen_rows = 0usize;
    for (ln, line) in lines {
        let i = seen_rows;
        if i >= n {
            if line.trim().is_empty() {
                continue;
            }
            return Err(Error::parse(path, ln + 1, format!("more than {n} rows")));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n {
            return Err(Error::parse(
                path,
                ln + 1,
                format!("row has {} cells, expected {n}", cells.len()),
            ));
        }
        for (j, cell) in cells.iter().enumerate() {
            if cell.trim().is_empty() {
                continue;
            }
            let v = parse_f64(cell, path, ln + 1)?;
            if i == j {
                return Err(Error::parse(
                    path,
                    ln + 1,
                    format!("diagonal entry ({i},{i}) must be blank"),
                ));
            }
            if let Some(prev) = m.get(i, j) {
                if prev != v {
                    return Err(Error::Validation(format!(
                        "{}: asymmetric entry ({i},{j}): {} vs {}",
                        path.display(),
                        fmt_f64(prev),
                        fmt_f64(v)
                    )));
                }
            } else {
                m.set(i, j, v).map_err(|e| {
                    Error::parse(path, ln + 1, format!("cell ({i},{j}): {e}"))
                })?;
            }
        }
        seen_rows += 1;
    }
    if seen_rows != n {
        return Err(Error::parse(
            path,
            0,
            format!("{seen_rows} data rows, expected {n}"),
        ));
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Relation sets
// ---------------------------------------------------------------------------

/// Writes one "i,j" line per relation, canonical order.
pub fn save_relations(r: &RelationSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, j) in r.iter() {
        out.push_str(&format!("{i},{j}\n"));
    }
    atomic_write(path, out.as_bytes())
}

pub fn load_relations(path: &Path) -> Result<RelationSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let bad = || Error::parse(path, ln + 1, format!("expected \"i,j\", got {line:?}"));
        let i: usize = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let j: usize = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        if parts.next().is_some() {
            return Err(bad());
        }
        pairs.push((i, j));
    }
    RelationSet::from_pairs(pairs)
}
