//! On-disk bundle layout: `manifest.json` plus one little-endian `f32` file
//! per named parameter tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CycleNet, ModelBundle, ModelConfig, Provenance};
use crate::{Error, Result};

pub const BUNDLE_FORMAT: &str = "psmlab-bundle";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: ModelConfig,
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
}

impl ModelBundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut tensors = Vec::new();
        for t in self.net.params() {
            let file = format!("{}.f32", t.name);
            let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(dir.join(&file), bytes)?;
            tensors.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                file,
            });
        }
        let manifest = Manifest {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            config: self.net.config.clone(),
            provenance: self.provenance.clone(),
            tensors,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format != BUNDLE_FORMAT {
            return Err(Error::BundleFormat(format!("unknown format tag {:?}", manifest.format)));
        }
        if manifest.version != BUNDLE_VERSION {
            return Err(Error::BundleFormat(format!("unsupported version {}", manifest.version)));
        }
        let mut net = CycleNet::<f32>::new(manifest.config, 0)?;
        for t in net.params_mut() {
            let entry = manifest
                .tensors
                .iter()
                .find(|e| e.name == t.name)
                .ok_or_else(|| Error::BundleFormat(format!("missing tensor {}", t.name)))?;
            if entry.shape != t.shape {
                return Err(Error::BundleFormat(format!(
                    "tensor {} has shape {:?}, config implies {:?}",
                    t.name, entry.shape, t.shape
                )));
            }
            let bytes = fs::read(dir.join(&entry.file))?;
            if bytes.len() != 4 * t.len() {
                return Err(Error::BundleFormat(format!("tensor {} blob has {} bytes", t.name, bytes.len())));
            }
            for (v, chunk) in t.data.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        Ok(Self {
            net,
            provenance: manifest.provenance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig {
            image_size: 8,
            embedding_dim: 4,
            widths: vec![2, 2],
            ..ModelConfig::default()
        };
        let b = ModelBundle::new(cfg, 5).unwrap();
        b.save(dir.path()).unwrap();
        let back = ModelBundle::load(dir.path()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn rejects_foreign_format() {
        let dir = tempfile::tempdir().unwrap();
        let b = ModelBundle::new(ModelConfig::tiny(4), 5).unwrap();
        b.save(dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&path).unwrap().replace(BUNDLE_FORMAT, "other");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(ModelBundle::load(dir.path()), Err(Error::BundleFormat(_))));
    }
}
