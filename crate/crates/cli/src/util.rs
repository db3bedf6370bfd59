//! Shared helpers: JSON config loading, descriptor output, pair parsing.

use std::path::Path;

use pairscout::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Load a JSON config file, or the type's defaults when no path is given.
/// Unknown fields are rejected by the target types, so a typoed key fails
/// loudly instead of silently falling back to a default.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArg(format!("config {}: {e}", path.display())))
}

/// Write the fully resolved run configuration next to the outputs so a run
/// can be reproduced from its artifacts alone.
pub fn write_descriptor<T: Serialize>(dir: &Path, descriptor: &T) -> Result<()> {
    let path = dir.join("descriptor.json");
    let mut text = serde_json::to_string_pretty(descriptor)
        .map_err(|e| Error::InvalidArg(format!("descriptor: {e}")))?;
    text.push('\n');
    pairscout::io::atomic_write(&path, text.as_bytes())
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Error out when an option that has no meaning in the chosen mode was
/// given, rather than silently ignoring it.
pub fn reject_unused(context: &str, unused: &[(&str, bool)]) -> Result<()> {
    let offending: Vec<&str> = unused
        .iter()
        .filter(|(_, given)| *given)
        .map(|(name, _)| *name)
        .collect();
    if offending.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidArg(format!(
            "not applicable to {context}: {}",
            offending.join(", ")
        )))
    }
}

/// Parse "i,j" pair arguments into canonical (lo, hi) form, sorted and
/// checked for duplicates.
pub fn parse_pairs(args: &[String]) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::with_capacity(args.len());
    for arg in args {
        let (a, b) = arg
            .split_once(',')
            .ok_or_else(|| Error::InvalidArg(format!("pair '{arg}' is not of the form i,j")))?;
        let i: usize = a
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArg(format!("pair '{arg}' has a non-integer id")))?;
        let j: usize = b
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArg(format!("pair '{arg}' has a non-integer id")))?;
        if i == j {
            return Err(Error::InvalidArg(format!("pair '{arg}' repeats one id")));
        }
        pairs.push((i.min(j), i.max(j)));
    }
    pairs.sort_unstable();
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            return Err(Error::InvalidArg(format!(
                "pair {},{} is given more than once",
                w[0].0, w[0].1
            )));
        }
    }
    Ok(pairs)
}
