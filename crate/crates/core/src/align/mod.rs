//! Face normalization: crop, center and rotate each face so the eyes sit on a
//! horizontal line at fixed canonical positions.

mod landmarks;

pub use landmarks::{
    detect_landmarks, parse_landmark_file, write_landmark_file, ExternalDetector, GroundTruthLandmarks,
    LandmarkSource, PrecomputedLandmarks,
};

use serde::{Deserialize, Serialize};

use crate::data::FrameRef;
use crate::error::{Error, Result};
use crate::image::Image;

pub const LANDMARK_COUNT: usize = 68;
/// iBUG 68-point indices; the first eye is the one on the image's left.
pub const LEFT_EYE: std::ops::RangeInclusive<usize> = 36..=41;
pub const RIGHT_EYE: std::ops::RangeInclusive<usize> = 42..=47;
pub const MOUTH: std::ops::RangeInclusive<usize> = 48..=67;

/// Canonical eye height as a fraction of the output size.
pub const CANONICAL_EYE_Y: f64 = 0.40;
/// Canonical inter-ocular distance as a fraction of the output width.
pub const CANONICAL_EYE_SPACING: f64 = 0.38;

/// Convert a fractional image position into continuous pixel coordinates
/// (pixel centres at integers).
#[inline]
pub fn frac_to_pixel(frac: f64, size: usize) -> f64 {
    frac * size as f64 - 0.5
}

/// 68 facial landmarks in source-image pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    points: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::InvalidLandmarks(format!(
                "expected {LANDMARK_COUNT} points, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidLandmarks("non-finite coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Check that every point lies within the image bounds plus a 10% margin.
    pub fn validate_bounds(&self, width: usize, height: usize) -> Result<()> {
        let mx = 0.1 * width as f64;
        let my = 0.1 * height as f64;
        for (i, p) in self.points.iter().enumerate() {
            if p[0] < -mx || p[0] > width as f64 + mx || p[1] < -my || p[1] > height as f64 + my {
                return Err(Error::InvalidLandmarks(format!(
                    "point {i} at ({:.1}, {:.1}) outside {width}x{height} (+10%)",
                    p[0], p[1]
                )));
            }
        }
        Ok(())
    }

    fn centroid(&self, range: std::ops::RangeInclusive<usize>) -> [f64; 2] {
        let n = range.clone().count() as f64;
        let (sx, sy) = range.fold((0.0, 0.0), |(sx, sy), i| {
            (sx + self.points[i][0], sy + self.points[i][1])
        });
        [sx / n, sy / n]
    }

    pub fn left_eye_center(&self) -> [f64; 2] {
        self.centroid(LEFT_EYE)
    }

    pub fn right_eye_center(&self) -> [f64; 2] {
        self.centroid(RIGHT_EYE)
    }

    pub fn mouth_center(&self) -> [f64; 2] {
        self.centroid(MOUTH)
    }

    pub fn transformed(&self, t: &Similarity) -> LandmarkSet {
        LandmarkSet {
            points: self.points.iter().map(|&p| t.apply(p)).collect(),
        }
    }
}

/// A 2D similarity transform `p' = s R p + t`, stored as
/// `x' = a x - b y + tx`, `y' = b x + a y + ty`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn from_scale_rotation(scale: f64, angle: f64, tx: f64, ty: f64) -> Self {
        Self {
            a: scale * angle.cos(),
            b: scale * angle.sin(),
            tx,
            ty,
        }
    }

    /// The unique similarity mapping `src0 -> dst0` and `src1 -> dst1`.
    pub fn from_point_pairs(src0: [f64; 2], src1: [f64; 2], dst0: [f64; 2], dst1: [f64; 2]) -> Result<Self> {
        let (dx, dy) = (src1[0] - src0[0], src1[1] - src0[1]);
        let norm = dx * dx + dy * dy;
        if norm < 1e-12 {
            return Err(Error::DegenerateLandmarks("eye centres coincide".into()));
        }
        let (ex, ey) = (dst1[0] - dst0[0], dst1[1] - dst0[1]);
        // complex division (ex + i ey) / (dx + i dy)
        let a = (ex * dx + ey * dy) / norm;
        let b = (ey * dx - ex * dy) / norm;
        let tx = dst0[0] - (a * src0[0] - b * src0[1]);
        let ty = dst0[1] - (b * src0[0] + a * src0[1]);
        Ok(Self { a, b, tx, ty })
    }

    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a * p[0] - self.b * p[1] + self.tx,
            self.b * p[0] + self.a * p[1] + self.ty,
        ]
    }

    pub fn inverse(&self) -> Similarity {
        let n = self.a * self.a + self.b * self.b;
        let (ia, ib) = (self.a / n, -self.b / n);
        Similarity {
            a: ia,
            b: ib,
            tx: -(ia * self.tx - ib * self.ty),
            ty: -(ib * self.tx + ia * self.ty),
        }
    }

    pub fn then(&self, next: &Similarity) -> Similarity {
        Similarity {
            a: next.a * self.a - next.b * self.b,
            b: next.b * self.a + next.a * self.b,
            tx: next.a * self.tx - next.b * self.ty + next.tx,
            ty: next.b * self.tx + next.a * self.ty + next.ty,
        }
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn rotation_degrees(&self) -> f64 {
        self.b.atan2(self.a).to_degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub out_size: usize,
    pub grayscale: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            out_size: 64,
            grayscale: false,
        }
    }
}

impl AlignConfig {
    pub fn with_size(out_size: usize) -> Self {
        Self {
            out_size,
            ..Self::default()
        }
    }

    pub fn left_eye_target(&self) -> [f64; 2] {
        [
            frac_to_pixel(0.5 - CANONICAL_EYE_SPACING / 2.0, self.out_size),
            frac_to_pixel(CANONICAL_EYE_Y, self.out_size),
        ]
    }

    pub fn right_eye_target(&self) -> [f64; 2] {
        [
            frac_to_pixel(0.5 + CANONICAL_EYE_SPACING / 2.0, self.out_size),
            frac_to_pixel(CANONICAL_EYE_Y, self.out_size),
        ]
    }
}

/// A face-centered, eyes-horizontal image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedFrame {
    pub identity: String,
    pub index: u32,
    pub pixels: Image,
    /// Source-to-aligned transform.
    pub transform: Similarity,
}

impl AlignedFrame {
    /// Vertical offset between the two eye centres after alignment.
    pub fn eye_level_error(&self, source_landmarks: &LandmarkSet) -> f64 {
        let l = self.transform.apply(source_landmarks.left_eye_center());
        let r = self.transform.apply(source_landmarks.right_eye_center());
        (l[1] - r[1]).abs()
    }
}

/// The transform that puts the eye centres at their canonical positions.
pub fn alignment_transform(landmarks: &LandmarkSet, config: &AlignConfig) -> Result<Similarity> {
    Similarity::from_point_pairs(
        landmarks.left_eye_center(),
        landmarks.right_eye_center(),
        config.left_eye_target(),
        config.right_eye_target(),
    )
}

/// Warp `pixels` so the landmarks' eye centres land on the canonical eye
/// positions. Returns the aligned image and the source-to-aligned transform.
pub fn align_face(pixels: &Image, landmarks: &LandmarkSet, config: &AlignConfig) -> Result<(Image, Similarity)> {
    let forward = alignment_transform(landmarks, config)?;
    let inv = forward.inverse();
    let n = config.out_size;
    let src = if config.grayscale { pixels.to_grayscale() } else { pixels.clone() };
    let mut out = Image::new(src.channels, n, n);
    for y in 0..n {
        for x in 0..n {
            let s = inv.apply([x as f64, y as f64]);
            for c in 0..src.channels {
                let v = src.sample_bilinear(c, s[0], s[1]).clamp(0.0, 1.0);
                out.set(c, y, x, v);
            }
        }
    }
    Ok((out, forward))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscardReason {
    NoLandmarks,
    InvalidLandmarks(String),
    Degenerate(String),
    Unreadable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardEntry {
    pub identity: String,
    pub index: u32,
    pub reason: DiscardReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscardLog {
    pub entries: Vec<DiscardEntry>,
    pub total_frames: usize,
}

impl DiscardLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fraction(&self) -> f64 {
        if self.total_frames == 0 {
            0.0
        } else {
            self.entries.len() as f64 / self.total_frames as f64
        }
    }

    pub fn merge(&mut self, other: DiscardLog) {
        self.entries.extend(other.entries);
        self.total_frames += other.total_frames;
    }
}

/// Detect, validate and align every frame, preserving input order.
/// Frames that can't be aligned are logged, never fatal.
pub fn preprocess_sequence(
    frames: &[FrameRef],
    source: &dyn LandmarkSource,
    config: &AlignConfig,
) -> (Vec<AlignedFrame>, DiscardLog) {
    let mut aligned = Vec::with_capacity(frames.len());
    let mut log = DiscardLog {
        entries: Vec::new(),
        total_frames: frames.len(),
    };
    for frame in frames {
        let discard = |reason| DiscardEntry {
            identity: frame.identity.clone(),
            index: frame.index,
            reason,
        };
        let pixels = match frame.load_pixels() {
            Ok(p) => p,
            Err(e) => {
                log.entries.push(discard(DiscardReason::Unreadable(e.to_string())));
                continue;
            }
        };
        let Some(lm) = source.detect(frame, &pixels) else {
            log.entries.push(discard(DiscardReason::NoLandmarks));
            continue;
        };
        if let Err(e) = lm.validate_bounds(pixels.width, pixels.height) {
            log.entries.push(discard(DiscardReason::InvalidLandmarks(e.to_string())));
            continue;
        }
        match align_face(&pixels, &lm, config) {
            Ok((img, transform)) => aligned.push(AlignedFrame {
                identity: frame.identity.clone(),
                index: frame.index,
                pixels: img,
                transform,
            }),
            Err(e) => log.entries.push(discard(DiscardReason::Degenerate(e.to_string()))),
        }
    }
    (aligned, log)
}
