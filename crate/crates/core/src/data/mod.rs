//! Datasets: DISFA-format loading, synthetic generation, splits and
//! AU statistics.

mod disfa;
mod split;
mod stats;
pub mod synth;

pub use disfa::{load_disfa, write_disfa_tree, DisfaLayout};
pub use split::{identity_folds, stratified_split};
pub use stats::{au_statistics, pearson, AuStatistics};
pub use synth::{synth_generate, SynthConfig};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::align::{preprocess_sequence, AlignConfig, DiscardLog, LandmarkSet, LandmarkSource, Similarity};
use crate::au::AuRecord;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Disfa,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkStatus {
    Present,
    Missing,
}

/// Where a frame's pixels live.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSource {
    File(PathBuf),
    #[serde(skip)]
    Memory(Arc<Image>),
}

/// Generator-side ground truth carried by synthetic frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    /// `None` when the generator simulated an occluded face.
    pub landmarks: Option<LandmarkSet>,
    /// Motion factor values in `[0, 1]`, one per factor kind.
    pub motion: Vec<f32>,
    /// Activation of each person-specific pattern.
    pub patterns: Vec<f32>,
    /// Canonical-to-source head pose.
    pub pose: Similarity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRef {
    pub identity: String,
    /// Position in the source video (20 fps for DISFA).
    pub index: u32,
    pub labels: AuRecord,
    pub landmark_status: LandmarkStatus,
    pub source: FrameSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<SynthTruth>,
}

impl FrameRef {
    pub fn load_pixels(&self) -> Result<Image> {
        match &self.source {
            FrameSource::Memory(img) => Ok((**img).clone()),
            FrameSource::File(p) => Image::load(p),
        }
    }

    pub fn is_usable(&self) -> bool {
        self.landmark_status == LandmarkStatus::Present
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub frame_width: usize,
    pub frame_height: usize,
    pub channels: usize,
    pub fps: f64,
}

/// Subjects mapped to their frames, ordered by strictly increasing index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    subjects: BTreeMap<String, Vec<FrameRef>>,
    pub source: DataSource,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(subjects: BTreeMap<String, Vec<FrameRef>>, source: DataSource, meta: DatasetMeta) -> Result<Self> {
        for (id, frames) in &subjects {
            if let Some(w) = frames.windows(2).find(|w| w[1].index <= w[0].index) {
                return Err(Error::InvalidConfig(format!(
                    "subject {id}: frame indices not strictly increasing ({} then {})",
                    w[0].index, w[1].index
                )));
            }
            if let Some(f) = frames.iter().find(|f| &f.identity != id) {
                return Err(Error::InvalidConfig(format!(
                    "frame {} tagged {:?} filed under subject {id}",
                    f.index, f.identity
                )));
            }
        }
        Ok(Self {
            subjects,
            source,
            meta,
        })
    }

    pub fn identities(&self) -> Vec<String> {
        self.subjects.keys().cloned().collect()
    }

    pub fn subjects(&self) -> &BTreeMap<String, Vec<FrameRef>> {
        &self.subjects
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.values().all(Vec::is_empty)
    }

    pub fn total_frames(&self) -> usize {
        self.subjects.values().map(Vec::len).sum()
    }

    pub fn frames(&self, identity: &str) -> Result<&[FrameRef]> {
        self.subjects
            .get(identity)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownIdentity(identity.to_string()))
    }

    /// Frames with landmarks, in temporal order.
    pub fn usable_frames(&self, identity: &str) -> Result<Vec<&FrameRef>> {
        Ok(self.frames(identity)?.iter().filter(|f| f.is_usable()).collect())
    }

    pub fn discard_ratio(&self) -> f64 {
        let total = self.total_frames();
        if total == 0 {
            return 0.0;
        }
        let missing = self.subjects.values().flatten().filter(|f| !f.is_usable()).count();
        missing as f64 / total as f64
    }

    /// A dataset restricted to the given identities.
    pub fn subset(&self, identities: &[String]) -> Result<Dataset> {
        let mut subjects = BTreeMap::new();
        for id in identities {
            subjects.insert(id.clone(), self.frames(id)?.to_vec());
        }
        Ok(Dataset {
            subjects,
            source: self.source,
            meta: self.meta,
        })
    }

    /// Write the JSON index. Only file-backed frames can be indexed.
    pub fn save_index(&self, path: &Path) -> Result<()> {
        if self
            .subjects
            .values()
            .flatten()
            .any(|f| matches!(f.source, FrameSource::Memory(_)))
        {
            return Err(Error::Unsupported(
                "in-memory frames must be written to disk before indexing".into(),
            ));
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load_index(path: &Path) -> Result<Dataset> {
        let ds: Dataset = serde_json::from_slice(&fs::read(path)?)?;
        Dataset::new(ds.subjects, ds.source, ds.meta)
    }

    /// Write every frame as PNG under `dir/<identity>/<index>.png` and return
    /// a file-backed copy of the dataset.
    pub fn materialize(&self, dir: &Path) -> Result<Dataset> {
        let mut subjects = BTreeMap::new();
        for (id, frames) in &self.subjects {
            let sub = dir.join(id);
            fs::create_dir_all(&sub)?;
            let mut out = Vec::with_capacity(frames.len());
            for f in frames {
                let path = sub.join(format!("{:05}.png", f.index));
                if let FrameSource::Memory(img) = &f.source {
                    img.save_png(&path)?;
                } else {
                    f.load_pixels()?.save_png(&path)?;
                }
                let mut g = f.clone();
                g.source = FrameSource::File(path);
                out.push(g);
            }
            subjects.insert(id.clone(), out);
        }
        Ok(Dataset {
            subjects,
            source: self.source,
            meta: self.meta,
        })
    }

    /// Align every frame. Frames that fail detection stay in the dataset
    /// marked `Missing` so the discard ratio remains visible.
    pub fn aligned(&self, source: &dyn LandmarkSource, config: &AlignConfig) -> (Dataset, DiscardLog) {
        let mut subjects = BTreeMap::new();
        let mut log = DiscardLog::default();
        for (id, frames) in &self.subjects {
            let candidates: Vec<FrameRef> = frames.iter().filter(|f| f.is_usable()).cloned().collect();
            let (aligned, sub_log) = preprocess_sequence(&candidates, source, config);
            let mut by_index: BTreeMap<u32, Image> = aligned.into_iter().map(|a| (a.index, a.pixels)).collect();
            let mut out = Vec::with_capacity(frames.len());
            for f in frames {
                let mut g = f.clone();
                match by_index.remove(&f.index) {
                    Some(img) => g.source = FrameSource::Memory(Arc::new(img)),
                    None => g.landmark_status = LandmarkStatus::Missing,
                }
                out.push(g);
            }
            let pre_missing = frames.len() - candidates.len();
            log.merge(sub_log);
            log.total_frames += pre_missing;
            for f in frames.iter().filter(|f| !f.is_usable()) {
                log.entries.push(crate::align::DiscardEntry {
                    identity: id.clone(),
                    index: f.index,
                    reason: crate::align::DiscardReason::NoLandmarks,
                });
            }
            subjects.insert(id.clone(), out);
        }
        let meta = DatasetMeta {
            frame_width: config.out_size,
            frame_height: config.out_size,
            channels: if config.grayscale { 1 } else { self.meta.channels },
            fps: self.meta.fps,
        };
        (
            Dataset {
                subjects,
                source: self.source,
                meta,
            },
            log,
        )
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::au::AU_COUNT;

    pub fn frame(identity: &str, index: u32, active: &[usize]) -> FrameRef {
        let mut ints = [0u8; AU_COUNT];
        for &c in active {
            ints[c] = 3;
        }
        FrameRef {
            identity: identity.to_string(),
            index,
            labels: AuRecord::new(ints).unwrap(),
            landmark_status: LandmarkStatus::Present,
            source: FrameSource::Memory(Arc::new(Image::new(1, 2, 2))),
            truth: None,
        }
    }

    pub fn meta() -> DatasetMeta {
        DatasetMeta {
            frame_width: 2,
            frame_height: 2,
            channels: 1,
            fps: 20.0,
        }
    }

    pub fn dataset(subjects: Vec<(&str, Vec<FrameRef>)>) -> Dataset {
        let map = subjects.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        Dataset::new(map, DataSource::Synthetic, meta()).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn rejects_unordered_frames() {
        let map = BTreeMap::from([("A".to_string(), vec![frame("A", 2, &[]), frame("A", 1, &[])])]);
        assert!(Dataset::new(map, DataSource::Synthetic, meta()).is_err());
    }

    #[test]
    fn unknown_identity() {
        let ds = dataset(vec![("A", vec![frame("A", 0, &[])])]);
        assert!(matches!(ds.frames("B"), Err(Error::UnknownIdentity(_))));
    }

    #[test]
    fn discard_ratio_counts_missing() {
        let mut f = frame("A", 1, &[]);
        f.landmark_status = LandmarkStatus::Missing;
        let ds = dataset(vec![("A", vec![frame("A", 0, &[]), f])]);
        assert_eq!(ds.discard_ratio(), 0.5);
        assert_eq!(ds.usable_frames("A").unwrap().len(), 1);
    }

    #[test]
    fn memory_frames_refuse_indexing() {
        let ds = dataset(vec![("A", vec![frame("A", 0, &[])])]);
        let dir = tempfile::tempdir().unwrap();
        assert!(ds.save_index(&dir.path().join("i.json")).is_err());
        let on_disk = ds.materialize(dir.path()).unwrap();
        on_disk.save_index(&dir.path().join("i.json")).unwrap();
        let back = Dataset::load_index(&dir.path().join("i.json")).unwrap();
        assert_eq!(back.total_frames(), 1);
        assert_eq!(back.frames("A").unwrap()[0].load_pixels().unwrap().height, 2);
    }
}
