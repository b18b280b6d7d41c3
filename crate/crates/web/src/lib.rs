//! Browser demo. Three operations are exported to JavaScript: render and
//! align a synthetic face, run DBSCAN on clicked points, and score cluster AU
//! profiles with the novelty metric.
//!
//! The `*_impl` functions hold the logic and are plain Rust so they can be
//! tested natively; the exported wrappers only convert errors.

use psmlab::align::{align_face, AlignConfig, Similarity};
use psmlab::au::AU_COUNT;
use psmlab::cluster::{dbscan, novelty_flags, ClusterProfile, MetricDistance, NoveltyReport, Side};
use psmlab::data::synth::{labels_from_motion, render_frame, FaceIdentity, MAX_FACTORS};
use psmlab::image::Image;
use psmlab::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn rgba(img: &Image) -> Vec<u8> {
    let rgb = img.to_rgb();
    let mut out = Vec::with_capacity(rgb.height * rgb.width * 4);
    for y in 0..rgb.height {
        for x in 0..rgb.width {
            for c in 0..3 {
                out.push((rgb.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}

/// A rendered face before and after alignment, as RGBA bytes.
#[wasm_bindgen]
pub struct FaceView {
    size: usize,
    raw: Vec<u8>,
    aligned: Vec<u8>,
    active_aus: Vec<u8>,
}

#[wasm_bindgen]
impl FaceView {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    #[wasm_bindgen(getter)]
    pub fn raw(&self) -> Vec<u8> {
        self.raw.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn aligned(&self) -> Vec<u8> {
        self.aligned.clone()
    }

    /// AU numbers whose intensity crosses the positive threshold.
    #[wasm_bindgen(getter)]
    pub fn active_aus(&self) -> Vec<u8> {
        self.active_aus.clone()
    }
}

pub fn render_face_impl(identity_seed: u64, motion: &[f64], tilt_deg: f64, size: usize) -> Result<FaceView> {
    if motion.len() != MAX_FACTORS {
        return Err(Error::InvalidParams(format!(
            "expected {MAX_FACTORS} motion factors, got {}",
            motion.len()
        )));
    }
    if !(8..=256).contains(&size) {
        return Err(Error::InvalidParams(format!("size {size} outside 8..=256")));
    }
    let mut m = [0.0; MAX_FACTORS];
    for (d, &v) in m.iter_mut().zip(motion) {
        *d = v.clamp(0.0, 1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(identity_seed);
    let id = FaceIdentity::random(&mut rng, 0, MAX_FACTORS);
    // rotate about the image centre
    let c = (size as f64 - 1.0) / 2.0;
    let (s, co) = tilt_deg.to_radians().sin_cos();
    let pose = Similarity {
        a: co,
        b: s,
        tx: c - (co * c - s * c),
        ty: c - (s * c + co * c),
    };
    let (img, landmarks) = render_frame(&id, &m, &[], &pose, size);
    let (aligned, _) = align_face(&img, &landmarks, &AlignConfig::with_size(size))?;
    let labels = labels_from_motion(&m);
    let active_aus = psmlab::au::AU_IDS
        .iter()
        .enumerate()
        .filter(|&(ch, _)| labels.is_active(ch))
        .map(|(_, &au)| au)
        .collect();
    Ok(FaceView {
        size,
        raw: rgba(&img),
        aligned: rgba(&aligned),
        active_aus,
    })
}

/// Render a synthetic face with the given motion factors (each in `[0, 1]`),
/// tilt it, and align it back from its landmarks.
#[wasm_bindgen]
pub fn render_face(identity_seed: u64, motion: &[f64], tilt_deg: f64, size: usize) -> std::result::Result<FaceView, JsError> {
    render_face_impl(identity_seed, motion, tilt_deg, size).map_err(js)
}

pub fn dbscan_impl(xy: &[f64], eps: f64, min_samples: usize) -> Result<Vec<i32>> {
    if xy.len() % 2 != 0 {
        return Err(Error::InvalidParams("coordinates must come in x, y pairs".into()));
    }
    let points: Vec<Vec<f64>> = xy.chunks(2).map(|p| p.to_vec()).collect();
    if points.is_empty() {
        return Ok(Vec::new());
    }
    Ok(dbscan(&points, eps, min_samples)?
        .into_iter()
        .map(|l| l.map_or(-1, |c| c as i32))
        .collect())
}

/// Cluster labels for interleaved 2-D points; -1 marks noise.
#[wasm_bindgen]
pub fn dbscan_labels(xy: &[f64], eps: f64, min_samples: usize) -> std::result::Result<Vec<i32>, JsError> {
    dbscan_impl(xy, eps, min_samples).map_err(js)
}

fn parse_profiles(text: &str, side: Side) -> Result<Vec<ClusterProfile>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            let values = line
                .split([',', ' ', '\t'])
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::InvalidParams(format!("line {}: '{t}' is not a number", i + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            let au_frequency: [f64; AU_COUNT] = values.try_into().map_err(|v: Vec<f64>| {
                Error::InvalidParams(format!("line {}: expected {AU_COUNT} values, got {}", i + 1, v.len()))
            })?;
            Ok(ClusterProfile {
                cluster_id: i,
                members: Vec::new(),
                au_frequency,
                source: side,
            })
        })
        .collect()
}

pub fn novelty_impl(psm: &str, gm: &str, threshold: f64) -> Result<NoveltyReport> {
    novelty_flags(
        &parse_profiles(psm, Side::Psm)?,
        &parse_profiles(gm, Side::Gm)?,
        threshold,
        MetricDistance::L1,
    )
}

/// Novelty report as JSON. Each input line is one cluster's 12 AU
/// frequencies, separated by commas or spaces.
#[wasm_bindgen]
pub fn novelty_report(psm: &str, gm: &str, threshold: f64) -> std::result::Result<String, JsError> {
    let r = novelty_impl(psm, gm, threshold).map_err(js)?;
    serde_json::to_string(&r).map_err(|e| JsError::new(&e.to_string()))
}
