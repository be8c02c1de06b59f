pub mod eval;
pub mod examples;
pub mod ingest;
pub mod markers;
pub mod probe;
pub mod report;
pub mod train;
pub mod vocab;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Sidecar path for an artifact: corpus.jsonl -> corpus.<tag>.json
pub fn sidecar(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.{tag}.json"))
}

pub fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        anyhow::bail!("{what} not found at {}", path.display());
    }
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading {what} at {}", path.display()))?;
    serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing {what} at {}", path.display()))
}
