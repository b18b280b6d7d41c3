use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Written next to the outputs of every artifact-producing command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector; rerunning it reproduces the tables.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    /// SHA-256 of every input file or directory tree.
    pub inputs: BTreeMap<String, String>,
    /// Output files relative to the run directory.
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub tool_version: String,
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn files_under(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Hash a file, or every file below a directory (relative names included).
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        for f in files_under(path)? {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0u8]);
            h.update(fs::read(&f)?);
        }
    } else {
        h.update(fs::read(path)?);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn list_outputs(out: &Path) -> Result<Vec<String>> {
    Ok(files_under(out)?
        .into_iter()
        .filter_map(|p| p.strip_prefix(out).ok().map(|r| r.to_string_lossy().into_owned()))
        .filter(|r| r != MANIFEST_FILE)
        .collect())
}
