//! Run manifests: config hash, input digests, output paths, tool version
//! and seed — enough to replay any pipeline stage byte-for-byte.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config_json: &str) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config_hash: sha256_hex(config_json.as_bytes()),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: digest_file(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes `<target>.manifest.json` next to the named output artifact
    /// (or `manifest.json` inside it when the artifact is a directory).
    pub fn write_beside(&self, target: &Path) -> Result<PathBuf> {
        let path = if target.is_dir() {
            target.join("manifest.json")
        } else {
            let mut name = target.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            target.with_file_name(name)
        };
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_lands_beside_the_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let artifact = dir.path().join("corpus.jsonl");
        std::fs::write(&artifact, b"{}\n").unwrap();
        let mut m = RunManifest::new("ingest", Some(1), "{}");
        m.add_input(&artifact).unwrap();
        m.add_output(&artifact);
        let path = m.write_beside(&artifact).unwrap();
        assert_eq!(path.file_name().unwrap(), "corpus.jsonl.manifest.json");
        let loaded: RunManifest =
            serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
        assert_eq!(loaded.inputs.len(), 1);
        assert_eq!(loaded.seed, Some(1));
    }
}
