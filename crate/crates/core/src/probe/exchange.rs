//! Embedding exchange files: little-endian `f32` rows plus a JSON manifest
//! naming the identity and frame index of each row. Lets embeddings from
//! other models be probed with the same protocol.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const EMBEDDING_FORMAT: &str = "psmlab-embeddings";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub identity: String,
    pub index: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dim: usize,
    data_file: String,
    rows: Vec<EmbeddingRow>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    rows: Vec<EmbeddingRow>,
    data: Vec<f32>,
    lookup: HashMap<(String, u32), usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[EmbeddingRow] {
        &self.rows
    }

    pub fn push(&mut self, identity: &str, index: u32, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        self.lookup.insert((identity.to_string(), index), self.rows.len());
        self.rows.push(EmbeddingRow {
            identity: identity.to_string(),
            index,
        });
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, identity: &str, index: u32) -> Option<&[f32]> {
        self.lookup.get(&(identity.to_string(), index)).map(|&i| self.row(i))
    }

    /// Write `<path>` (manifest) and `<path stem>.f32` (rows).
    pub fn write(&self, manifest_path: &Path) -> Result<()> {
        let blob = data_path(manifest_path);
        if let Some(parent) = manifest_path.parent() {
            fs::create_dir_all(parent)?;
        }
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&blob, bytes)?;
        let manifest = Manifest {
            format: EMBEDDING_FORMAT.into(),
            version: 1,
            dim: self.dim,
            data_file: blob.file_name().unwrap().to_string_lossy().into_owned(),
            rows: self.rows.clone(),
        };
        fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn read(manifest_path: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
        if manifest.format != EMBEDDING_FORMAT {
            return Err(Error::SchemaMismatch {
                field: "format".into(),
                detail: format!("expected {EMBEDDING_FORMAT:?}, got {:?}", manifest.format),
            });
        }
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let bytes = fs::read(dir.join(&manifest.data_file))?;
        if bytes.len() != 4 * manifest.dim * manifest.rows.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} rows of {} floats", manifest.rows.len(), manifest.dim),
                got: format!("{} bytes", bytes.len()),
            });
        }
        let mut table = Self::new(manifest.dim);
        for (row, chunk) in manifest.rows.iter().zip(bytes.chunks(4 * manifest.dim.max(1))) {
            let v: Vec<f32> = chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            table.push(&row.identity, row.index, &v)?;
        }
        Ok(table)
    }
}

fn data_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("f32")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = EmbeddingTable::new(3);
        t.push("SN001", 0, &[1.0, 2.0, 3.0]).unwrap();
        t.push("SN002", 7, &[-1.0, 0.5, 1e-3]).unwrap();
        let path = dir.path().join("emb.json");
        t.write(&path).unwrap();
        let back = EmbeddingTable::read(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.get("SN002", 7), Some(&[-1.0, 0.5, 1e-3][..]));
        assert!(t.push("SN003", 0, &[1.0]).is_err());
    }
}
