//! Locating, fingerprinting and loading TUDataset directories.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gla_core::data::{build_node_features, parse_tudataset_raw, FeaturePolicy};
use gla_core::GraphDataset;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything needed to reload exactly the same dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub name: String,
    pub feature_policy: FeaturePolicy,
    /// SHA-256 over the dataset's `<name>_*.txt` files.
    pub fingerprint: String,
}

/// Resolves a dataset argument. Paths that do not exist are retried under
/// `data_dir`.
pub fn resolve_path(arg: &Path, data_dir: Option<&Path>) -> Result<PathBuf> {
    if arg.is_dir() {
        return Ok(arg.to_path_buf());
    }
    if let Some(dir) = data_dir {
        let joined = dir.join(arg);
        if joined.is_dir() {
            return Ok(joined);
        }
    }
    bail!(gla_core::GlaError::MissingFile(arg.to_path_buf()))
}

pub fn default_name(path: &Path) -> Result<String> {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .context("cannot derive a dataset name from the path; pass --name")
}

pub fn fingerprint(dir: &Path, name: &str) -> Result<String> {
    let prefix = format!("{name}_");
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&prefix) && n.ends_with(".txt"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(gla_core::GlaError::MissingFile(dir.join(format!("{name}_A.txt"))));
    }
    let mut h = Sha256::new();
    for f in &files {
        let bytes = fs::read(f).with_context(|| format!("reading {}", f.display()))?;
        h.update(f.file_name().unwrap().to_string_lossy().as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Parses the dataset and settles the feature policy.
pub fn open(path: &Path, name: &str, policy: Option<FeaturePolicy>) -> Result<(DatasetRef, GraphDataset)> {
    let fingerprint = fingerprint(path, name)?;
    let (raw, stats) = parse_tudataset_raw(path, name)?;
    if stats.duplicate_edges + stats.self_loops > 0 {
        log::warn!(
            "{name}: dropped {} duplicate edges and {} self-loops",
            stats.duplicate_edges,
            stats.self_loops
        );
    }
    let policy = policy.unwrap_or_else(|| FeaturePolicy::default_for(&raw));
    let ds = build_node_features(&raw, policy)?;
    let path = fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
    Ok((
        DatasetRef {
            path,
            name: name.to_string(),
            feature_policy: policy,
            fingerprint,
        },
        ds,
    ))
}

/// Reloads a dataset recorded in a manifest and refuses silently changed data.
pub fn reopen(r: &DatasetRef) -> Result<GraphDataset> {
    let (now, ds) = open(&r.path, &r.name, Some(r.feature_policy))?;
    if now.fingerprint != r.fingerprint {
        bail!(gla_core::GlaError::Dataset(format!(
            "{} changed since the manifest was written (fingerprint {} != {})",
            r.path.display(),
            now.fingerprint,
            r.fingerprint
        )));
    }
    Ok(ds)
}
