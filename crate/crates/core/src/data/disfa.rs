//! Loader for DISFA-format trees.
//!
//! Default layout:
//!
//! ```text
//! root/
//!   manifest.json            (optional, see DisfaLayout)
//!   SN001/
//!     frames/00000.png ...   frame index = trailing digits of the file stem
//!     labels/AU1.csv ...     one "frame_index,intensity" line per frame
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataSource, Dataset, DatasetMeta, FrameRef, FrameSource, LandmarkStatus};
use crate::au::{AuRecord, AU_COUNT, AU_IDS};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Optional `manifest.json` remapping of the default directory names.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DisfaLayout {
    pub frames_dir: String,
    pub labels_dir: String,
    /// `{au}` is replaced by the AU number.
    pub label_pattern: String,
    pub fps: f64,
    /// Subject id to directory (relative to root). Empty means "every
    /// subdirectory that has a frames directory".
    pub subjects: BTreeMap<String, String>,
}

impl Default for DisfaLayout {
    fn default() -> Self {
        Self {
            frames_dir: "frames".into(),
            labels_dir: "labels".into(),
            label_pattern: "AU{au}.csv".into(),
            fps: 20.0,
            subjects: BTreeMap::new(),
        }
    }
}

impl DisfaLayout {
    pub fn label_path(&self, subject_dir: &Path, au: u8) -> PathBuf {
        subject_dir
            .join(&self.labels_dir)
            .join(self.label_pattern.replace("{au}", &au.to_string()))
    }
}

fn trailing_number(stem: &str) -> Option<u32> {
    let digits: String = stem
        .chars()
        .rev()
        .take_while(char::is_ascii_digit)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

fn list_frames(dir: &Path) -> Result<Vec<(u32, PathBuf)>> {
    let mut frames = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let idx = trailing_number(stem).ok_or_else(|| Error::CorruptImage {
            path: path.clone(),
            reason: "file name carries no frame index".into(),
        })?;
        frames.push((idx, path));
    }
    frames.sort_by_key(|(i, _)| *i);
    Ok(frames)
}

fn read_label_file(path: &Path) -> Result<BTreeMap<u32, u8>> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingLabelFile(path.to_path_buf()))?;
    let mut rows = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::InvalidConfig(format!("{}:{}: expected \"frame_index,intensity\"", path.display(), lineno + 1));
        let (f, v) = line.split_once(',').ok_or_else(bad)?;
        let f: u32 = f.trim().parse().map_err(|_| bad())?;
        let v: u8 = v.trim().parse().map_err(|_| bad())?;
        rows.insert(f, v);
    }
    Ok(rows)
}

/// Load a DISFA-format tree. When `landmark_dir` is given, frames without a
/// `<landmark_dir>/<subject>/<index>.txt` file are marked `Missing`.
pub fn load_disfa(root: &Path, landmark_dir: Option<&Path>) -> Result<Dataset> {
    let manifest = root.join("manifest.json");
    let layout: DisfaLayout = if manifest.is_file() {
        serde_json::from_slice(&fs::read(&manifest)?)?
    } else {
        DisfaLayout::default()
    };

    let mut subject_dirs: BTreeMap<String, PathBuf> = layout
        .subjects
        .iter()
        .map(|(id, rel)| (id.clone(), root.join(rel)))
        .collect();
    if subject_dirs.is_empty() && root.is_dir() {
        for entry in fs::read_dir(root)? {
            let path = entry?.path();
            if path.join(&layout.frames_dir).is_dir() {
                let id = path.file_name().unwrap().to_string_lossy().into_owned();
                subject_dirs.insert(id, path);
            }
        }
    }
    if subject_dirs.is_empty() {
        let probe = root.join("<subject>").join(&layout.labels_dir);
        return Err(Error::MissingLabelFile(probe));
    }

    let mut subjects = BTreeMap::new();
    let mut frame_size: Option<(u32, u32)> = None;
    let mut channels = 3;
    for (id, dir) in subject_dirs {
        let frames = list_frames(&dir.join(&layout.frames_dir))?;
        let mut intensities = vec![[0u8; AU_COUNT]; frames.len()];
        for (ch, &au) in AU_IDS.iter().enumerate() {
            let path = layout.label_path(&dir, au);
            let rows = read_label_file(&path)?;
            if rows.len() != frames.len() {
                return Err(Error::FrameCountMismatch {
                    subject: id.clone(),
                    au,
                    labels: rows.len(),
                    frames: frames.len(),
                });
            }
            for (k, (idx, _)) in frames.iter().enumerate() {
                let v = rows.get(idx).ok_or_else(|| Error::MissingLabelRow {
                    path: path.clone(),
                    frame: *idx,
                })?;
                intensities[k][ch] = *v;
            }
        }

        let mut out = Vec::with_capacity(frames.len());
        for ((idx, path), ints) in frames.into_iter().zip(intensities) {
            let dims = image::image_dimensions(&path).map_err(|e| Error::CorruptImage {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            match frame_size {
                None => {
                    frame_size = Some(dims);
                    let img = crate::image::Image::load(&path)?;
                    channels = img.channels;
                }
                Some(s) if s != dims => {
                    return Err(Error::CorruptImage {
                        path,
                        reason: format!("size {dims:?} differs from {s:?}"),
                    });
                }
                _ => {}
            }
            let labels = AuRecord::new(ints)?;
            let status = match landmark_dir {
                Some(ld) if !ld.join(&id).join(format!("{idx}.txt")).is_file() => LandmarkStatus::Missing,
                _ => LandmarkStatus::Present,
            };
            out.push(FrameRef {
                identity: id.clone(),
                index: idx,
                labels,
                landmark_status: status,
                source: FrameSource::File(path),
                truth: None,
            });
        }
        subjects.insert(id, out);
    }

    let (w, h) = frame_size.unwrap_or((0, 0));
    Dataset::new(
        subjects,
        DataSource::Disfa,
        DatasetMeta {
            frame_width: w as usize,
            frame_height: h as usize,
            channels,
            fps: layout.fps,
        },
    )
}

/// Write a dataset as a DISFA-format tree (plus landmark files when frames
/// carry ground truth). Returns the landmark directory if one was written.
pub fn write_disfa_tree(dataset: &Dataset, root: &Path) -> Result<Option<PathBuf>> {
    let layout = DisfaLayout::default();
    let lm_root = root.join("landmarks");
    let mut wrote_landmarks = false;
    for (id, frames) in dataset.subjects() {
        let sdir = root.join(id);
        let fdir = sdir.join(&layout.frames_dir);
        fs::create_dir_all(&fdir)?;
        fs::create_dir_all(sdir.join(&layout.labels_dir))?;
        let mut label_text = vec![String::new(); AU_COUNT];
        for f in frames {
            f.load_pixels()?.save_png(&fdir.join(format!("{:05}.png", f.index)))?;
            for (ch, text) in label_text.iter_mut().enumerate() {
                text.push_str(&format!("{},{}\n", f.index, f.labels.intensities()[ch]));
            }
            if let Some(lm) = f.truth.as_ref().and_then(|t| t.landmarks.as_ref()) {
                crate::align::write_landmark_file(&lm_root.join(id).join(format!("{}.txt", f.index)), lm)?;
                wrote_landmarks = true;
            }
        }
        for (ch, text) in label_text.into_iter().enumerate() {
            fs::write(layout.label_path(&sdir, AU_IDS[ch]), text)?;
        }
    }
    Ok(wrote_landmarks.then_some(lm_root))
}
