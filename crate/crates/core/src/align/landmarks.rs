//! Pluggable landmark sources. No detector is trained here: landmarks come
//! from precomputed files, an external program, or the synthetic generator.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::{LandmarkSet, LANDMARK_COUNT};
use crate::data::FrameRef;
use crate::error::{Error, Result};
use crate::image::Image;

pub trait LandmarkSource {
    /// `None` means no face was found; this is never an error.
    fn detect(&self, frame: &FrameRef, pixels: &Image) -> Option<LandmarkSet>;
}

/// Run a landmark source on a frame.
pub fn detect_landmarks(source: &dyn LandmarkSource, frame: &FrameRef, pixels: &Image) -> Option<LandmarkSet> {
    source.detect(frame, pixels)
}

/// Uses the generator's exact landmarks carried on synthetic frames.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruthLandmarks;

impl LandmarkSource for GroundTruthLandmarks {
    fn detect(&self, frame: &FrameRef, _pixels: &Image) -> Option<LandmarkSet> {
        frame.truth.as_ref().and_then(|t| t.landmarks.clone())
    }
}

/// Reads `<dir>/<identity>/<index>.txt`, 68 whitespace-separated `x y` lines.
#[derive(Debug, Clone)]
pub struct PrecomputedLandmarks {
    pub dir: PathBuf,
}

impl PrecomputedLandmarks {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, identity: &str, index: u32) -> PathBuf {
        self.dir.join(identity).join(format!("{index}.txt"))
    }
}

impl LandmarkSource for PrecomputedLandmarks {
    fn detect(&self, frame: &FrameRef, _pixels: &Image) -> Option<LandmarkSet> {
        let text = fs::read_to_string(self.path_for(&frame.identity, frame.index)).ok()?;
        parse_landmark_file(&text).ok()
    }
}

/// Invokes `<program> <image.png>`; a successful run prints 68 `x y` lines.
/// Empty output or a non-zero exit status means no face.
#[derive(Debug, Clone)]
pub struct ExternalDetector {
    pub program: PathBuf,
    pub scratch_dir: PathBuf,
}

impl LandmarkSource for ExternalDetector {
    fn detect(&self, frame: &FrameRef, pixels: &Image) -> Option<LandmarkSet> {
        let path = self
            .scratch_dir
            .join(format!("detect_{}_{}.png", frame.identity, frame.index));
        pixels.save_png(&path).ok()?;
        let output = Command::new(&self.program).arg(&path).output().ok();
        let _ = fs::remove_file(&path);
        let output = output?;
        if !output.status.success() {
            return None;
        }
        let text = String::from_utf8(output.stdout).ok()?;
        parse_landmark_file(&text).ok()
    }
}

pub fn parse_landmark_file(text: &str) -> Result<LandmarkSet> {
    let mut points = Vec::with_capacity(LANDMARK_COUNT);
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let mut it = line.split_whitespace().map(str::parse::<f64>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(y)), None) => points.push([x, y]),
            _ => return Err(Error::InvalidLandmarks(format!("bad landmark line {line:?}"))),
        }
    }
    LandmarkSet::new(points)
}

pub fn write_landmark_file(path: &Path, landmarks: &LandmarkSet) -> Result<()> {
    let mut s = String::with_capacity(LANDMARK_COUNT * 16);
    for p in landmarks.points() {
        s.push_str(&format!("{:.4} {:.4}\n", p[0], p[1]));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_68_lines() {
        let text: String = (0..68).map(|i| format!("{i} {}.5\n", i * 2)).collect();
        let lm = parse_landmark_file(&text).unwrap();
        assert_eq!(lm.points()[3], [3.0, 6.5]);
    }

    #[test]
    fn rejects_short_or_garbled_files() {
        assert!(parse_landmark_file("1 2\n3 4\n").is_err());
        let mut text: String = (0..67).map(|i| format!("{i} {i}\n")).collect();
        text.push_str("a b\n");
        assert!(parse_landmark_file(&text).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pts: Vec<[f64; 2]> = (0..68).map(|i| [i as f64 * 0.25, 3.0]).collect();
        let lm = LandmarkSet::new(pts).unwrap();
        let p = dir.path().join("S/7.txt");
        write_landmark_file(&p, &lm).unwrap();
        let back = parse_landmark_file(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(back, lm);
    }
}
