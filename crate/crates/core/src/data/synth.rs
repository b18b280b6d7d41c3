//! Desk-scale synthetic stand-in for DISFA.
//!
//! Each subject is a cartoon face (skin ellipse, hair cap, eyes, brows, nose,
//! mouth) with per-subject geometry and colours. Frames are driven by latent
//! motion factors that follow sparse, smooth "expression episodes"; AU labels
//! are thresholds of those factors. Subjects can carry person-specific
//! patterns: compound movements with their own visual signature that only
//! that subject produces.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataSource, Dataset, DatasetMeta, FrameRef, FrameSource, LandmarkStatus, SynthTruth};
use crate::align::{frac_to_pixel, LandmarkSet, Similarity, CANONICAL_EYE_SPACING, CANONICAL_EYE_Y, LANDMARK_COUNT};
use crate::au::{AuRecord, AU_COUNT};
use crate::error::{Error, Result};
use crate::image::Image;

/// Motion factor kinds, in order. Factor `k < 10` drives AU channel `k`;
/// `MouthOpen` drives both AU25 and AU26.
pub const FACTOR_NAMES: [&str; 11] = [
    "brow_inner_raise",
    "brow_outer_raise",
    "brow_lower",
    "lid_raise",
    "cheek_raise",
    "nose_wrinkle",
    "lip_corner_pull",
    "lip_corner_depress",
    "chin_raise",
    "lip_stretch",
    "mouth_open",
];
pub const MAX_FACTORS: usize = FACTOR_NAMES.len();
pub const MOUTH_OPEN: usize = 10;

/// Shared expression templates (factor index, weight).
const TEMPLATES: [&[(usize, f64)]; 5] = [
    // smile
    &[(4, 0.8), (6, 1.0), (10, 0.7)],
    // surprise
    &[(0, 1.0), (1, 0.9), (3, 0.8), (10, 0.9)],
    // frown
    &[(2, 1.0), (5, 0.7), (8, 0.7)],
    // sadness
    &[(0, 0.8), (2, 0.6), (7, 1.0), (8, 0.6)],
    // fear
    &[(0, 0.8), (1, 0.7), (2, 0.6), (3, 0.8), (9, 1.0)],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub frames_per_subject: usize,
    pub image_size: usize,
    /// Number of active motion factor kinds (at most 11).
    pub motion_factor_count: usize,
    /// Person-specific compound patterns per subject.
    pub person_specific_patterns: usize,
    pub seed: u64,
    /// Standard deviation of additive per-pixel sensor noise.
    pub pixel_noise: f64,
    /// Maximum in-plane head rotation in degrees.
    pub pose_jitter_deg: f64,
    /// Maximum head translation in pixels.
    pub pose_shift_px: f64,
    /// Fraction of frames rendered as occluded (no landmarks).
    pub occlusion_rate: f64,
    /// Per-frame landmark error, as from an imperfect detector: a random
    /// shift of up to this many pixels and a rotation of up to twice as
    /// many degrees.
    pub landmark_jitter_px: f64,
    /// Mean episode onsets per 1000 frames for each single factor.
    pub single_rate: f64,
    /// Mean onsets per 1000 frames for each shared expression template.
    pub template_rate: f64,
    /// Mean onsets per 1000 frames for each person-specific pattern.
    pub pattern_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 3,
            frames_per_subject: 600,
            image_size: 32,
            motion_factor_count: MAX_FACTORS,
            person_specific_patterns: 0,
            seed: 0,
            pixel_noise: 0.03,
            pose_jitter_deg: 8.0,
            pose_shift_px: 1.5,
            occlusion_rate: 0.0,
            landmark_jitter_px: 0.0,
            single_rate: 2.5,
            template_rate: 3.0,
            pattern_rate: 5.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.frames_per_subject == 0 {
            return Err(Error::InvalidConfig("synthetic dataset needs at least one subject and one frame".into()));
        }
        if self.image_size < 8 {
            return Err(Error::InvalidConfig(format!("image size {} < 8", self.image_size)));
        }
        if self.motion_factor_count > MAX_FACTORS {
            return Err(Error::InvalidConfig(format!(
                "at most {MAX_FACTORS} motion factors, got {}",
                self.motion_factor_count
            )));
        }
        if !(0.0..1.0).contains(&self.occlusion_rate) {
            return Err(Error::InvalidConfig("occlusion rate must be in [0, 1)".into()));
        }
        Ok(())
    }
}

pub fn subject_name(i: usize) -> String {
    format!("SN{:03}", i + 1)
}

/// AU intensity (0-5) for a factor value; positive (>1) exactly when the
/// factor exceeds 0.5.
pub fn factor_intensity(f: f64) -> u8 {
    ((f - 0.4) * 10.0).ceil().clamp(0.0, 5.0) as u8
}

pub fn labels_from_motion(motion: &[f64]) -> AuRecord {
    let mut ints = [0u8; AU_COUNT];
    for (k, &f) in motion.iter().enumerate().take(MOUTH_OPEN) {
        ints[k] = factor_intensity(f);
    }
    if let Some(&m) = motion.get(MOUTH_OPEN) {
        ints[10] = factor_intensity(m);
        ints[11] = factor_intensity(m);
    }
    AuRecord::new(ints).expect("intensities are clamped")
}

/// Visual signature of a person-specific pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMark {
    pub center: [f64; 2],
    pub radius: [f64; 2],
    pub color: [f32; 3],
    /// Factors co-activated by the pattern, with weights.
    pub drives: Vec<(usize, f64)>,
}

/// Per-subject appearance and movement style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceIdentity {
    pub skin: [f32; 3],
    pub hair: [f32; 3],
    pub background: [f32; 3],
    pub lip: [f32; 3],
    pub face_rx: f64,
    pub face_ry: f64,
    pub face_cy: f64,
    pub brow_y: f64,
    pub brow_thickness: f64,
    pub eye_rx: f64,
    pub eye_ry: f64,
    pub nose_end: f64,
    pub mouth_y: f64,
    pub mouth_w: f64,
    /// Visual amplitude of each factor for this person.
    pub gains: [f64; MAX_FACTORS],
    /// Relative episode rate.
    pub expressiveness: f64,
    pub patterns: Vec<PatternMark>,
}

fn jitter(rng: &mut ChaCha8Rng, base: f64, spread: f64) -> f64 {
    base + rng.random_range(-spread..=spread)
}

impl FaceIdentity {
    pub fn random(rng: &mut ChaCha8Rng, n_patterns: usize, n_factors: usize) -> Self {
        let tone = rng.random_range(0.45..0.85f32);
        let skin = [tone + 0.1, tone * 0.82, tone * 0.68].map(|v: f32| v.clamp(0.0, 1.0));
        let h = rng.random_range(0.05..0.45f32);
        let hair = [h, h * rng.random_range(0.6..1.0f32), h * rng.random_range(0.4..0.9f32)];
        let b = rng.random_range(0.35..0.6f32);
        let background = [b, b + rng.random_range(-0.05..0.05f32), b + rng.random_range(-0.05..0.08f32)];
        let lip = [skin[0] * 0.75, skin[1] * 0.45, skin[2] * 0.5];
        let mut gains = [1.0; MAX_FACTORS];
        for g in gains.iter_mut() {
            *g = rng.random_range(0.7..1.3);
        }
        let mut patterns = Vec::with_capacity(n_patterns);
        for _ in 0..n_patterns {
            let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
            // cheeks, temples, chin or forehead
            let (cx, cy) = match rng.random_range(0..4) {
                0 => (0.5 + side * rng.random_range(0.14..0.22), rng.random_range(0.58..0.66)),
                1 => (0.5 + side * rng.random_range(0.25..0.31), rng.random_range(0.42..0.5)),
                2 => (0.5 + side * rng.random_range(0.0..0.06), rng.random_range(0.84..0.88)),
                _ => (0.5 + side * rng.random_range(0.05..0.15), rng.random_range(0.18..0.24)),
            };
            let dark = rng.random_bool(0.7);
            let color = if dark {
                [skin[0] * 0.35, skin[1] * 0.3, skin[2] * 0.3]
            } else {
                [0.97, 0.93, 0.9]
            };
            let mut drives = Vec::new();
            let k = if n_factors >= 3 { rng.random_range(2..=3) } else { n_factors };
            while drives.len() < k {
                let f = rng.random_range(0..n_factors.max(1));
                if !drives.iter().any(|&(g, _)| g == f) {
                    drives.push((f, rng.random_range(0.75..1.0)));
                }
            }
            patterns.push(PatternMark {
                center: [cx, cy],
                radius: [rng.random_range(0.04..0.07), rng.random_range(0.025..0.05)],
                color,
                drives,
            });
        }
        Self {
            skin,
            hair,
            background,
            lip,
            face_rx: jitter(rng, 0.39, 0.03),
            face_ry: jitter(rng, 0.47, 0.03),
            face_cy: jitter(rng, 0.52, 0.02),
            brow_y: jitter(rng, 0.30, 0.02),
            brow_thickness: jitter(rng, 0.028, 0.006),
            eye_rx: jitter(rng, 0.075, 0.01),
            eye_ry: jitter(rng, 0.032, 0.006),
            nose_end: jitter(rng, 0.57, 0.03),
            mouth_y: jitter(rng, 0.72, 0.025),
            mouth_w: jitter(rng, 0.12, 0.02),
            gains,
            expressiveness: rng.random_range(0.6..1.4),
            patterns,
        }
    }
}

#[inline]
fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Coverage for a signed distance `d` (negative inside) with edge width `w`.
#[inline]
fn coverage(d: f64, w: f64) -> f64 {
    1.0 - smoothstep(-w, w, d)
}

#[inline]
fn ellipse_sd(u: f64, v: f64, c: [f64; 2], r: [f64; 2]) -> f64 {
    let dx = (u - c[0]) / r[0];
    let dy = (v - c[1]) / r[1];
    ((dx * dx + dy * dy).sqrt() - 1.0) * r[0].min(r[1])
}

#[inline]
fn capsule_sd(u: f64, v: f64, a: [f64; 2], b: [f64; 2], radius: f64) -> f64 {
    let (px, py) = (u - a[0], v - a[1]);
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let len2 = bx * bx + by * by;
    let t = if len2 > 0.0 { ((px * bx + py * by) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (px - t * bx, py - t * by);
    (dx * dx + dy * dy).sqrt() - radius
}

#[inline]
fn blend(c: &mut [f64; 3], col: [f32; 3], alpha: f64) {
    if alpha <= 0.0 {
        return;
    }
    let a = alpha.min(1.0);
    for i in 0..3 {
        c[i] = c[i] * (1.0 - a) + col[i] as f64 * a;
    }
}

/// Geometry of the moving parts for one frame, in canonical face units.
struct FaceGeometry {
    brow_inner: [[f64; 2]; 2],
    brow_outer: [[f64; 2]; 2],
    eye_ry: f64,
    mouth_center: [f64; 2],
    mouth_half_w: f64,
    corner_dy: f64,
    mouth_open: f64,
}

fn geometry(id: &FaceIdentity, m: &[f64; MAX_FACTORS]) -> FaceGeometry {
    let g = |k: usize| m[k] * id.gains[k];
    let half_eye = CANONICAL_EYE_SPACING / 2.0;
    let inner_x = 0.085 - 0.025 * g(2);
    let inner_y = id.brow_y - 0.075 * g(0) + 0.055 * g(2);
    let outer_y = id.brow_y - 0.075 * g(1) + 0.03 * g(2);
    FaceGeometry {
        brow_inner: [[0.5 - inner_x, inner_y], [0.5 + inner_x, inner_y]],
        brow_outer: [[0.5 - half_eye - 0.085, outer_y], [0.5 + half_eye + 0.085, outer_y]],
        eye_ry: (id.eye_ry * (1.0 + 1.2 * g(3) - 0.55 * g(4))).max(0.006),
        mouth_center: [0.5, id.mouth_y - 0.02 * g(8)],
        mouth_half_w: id.mouth_w * (1.0 + 0.4 * g(9) + 0.15 * g(6)),
        corner_dy: -0.065 * g(6) + 0.065 * g(7),
        mouth_open: 0.01 + 0.1 * g(MOUTH_OPEN),
    }
}

/// Colour of the canonical face at `(u, v)` in `[0,1]^2`. `w` is the
/// anti-aliasing edge width in face units.
fn shade(id: &FaceIdentity, geo: &FaceGeometry, m: &[f64; MAX_FACTORS], pat: &[f64], u: f64, v: f64, w: f64) -> [f64; 3] {
    let g = |k: usize| m[k] * id.gains[k];
    let mut c = id.background.map(f64::from);
    let half_eye = CANONICAL_EYE_SPACING / 2.0;

    // hair cap behind the face
    let hair_c = [0.5, id.face_cy - id.face_ry * 0.45];
    blend(&mut c, id.hair, coverage(ellipse_sd(u, v, hair_c, [id.face_rx * 1.12, id.face_ry * 0.72]), w));
    // face
    let face_cov = coverage(ellipse_sd(u, v, [0.5, id.face_cy], [id.face_rx, id.face_ry]), w);
    blend(&mut c, id.skin, face_cov);
    // fringe
    let fringe_c = [0.5, id.face_cy - id.face_ry * 0.92];
    blend(&mut c, id.hair, coverage(ellipse_sd(u, v, fringe_c, [id.face_rx * 0.9, id.face_ry * 0.22]), w));

    // cheeks (AU6)
    let cheek = [id.skin[0] * 0.95, id.skin[1] * 0.62, id.skin[2] * 0.6];
    for s in [-1.0, 1.0] {
        let cc = [0.5 + s * 0.21, 0.58 - 0.035 * g(4)];
        blend(&mut c, cheek, 0.9 * g(4).min(1.0) * coverage(ellipse_sd(u, v, cc, [0.075, 0.05]), w * 2.0));
    }
    // eyes
    for s in [-1.0, 1.0] {
        let ec = [0.5 + s * half_eye, CANONICAL_EYE_Y];
        let sclera = coverage(ellipse_sd(u, v, ec, [id.eye_rx, geo.eye_ry]), w);
        blend(&mut c, [0.95, 0.95, 0.93], sclera);
        let pr = geo.eye_ry.min(0.03);
        blend(&mut c, [0.08, 0.06, 0.05], sclera * coverage(ellipse_sd(u, v, ec, [0.032, pr.max(0.004)]), w));
    }
    // brows
    let brow_col = [id.hair[0] * 0.8, id.hair[1] * 0.8, id.hair[2] * 0.8];
    for side in 0..2 {
        let d = capsule_sd(u, v, geo.brow_inner[side], geo.brow_outer[side], id.brow_thickness / 2.0);
        blend(&mut c, brow_col, coverage(d, w));
    }
    // glabella lines (AU4)
    let crease = [id.skin[0] * 0.45, id.skin[1] * 0.4, id.skin[2] * 0.4];
    for s in [-1.0, 1.0] {
        let d = capsule_sd(u, v, [0.5 + s * 0.025, id.brow_y + 0.01], [0.5 + s * 0.02, id.brow_y + 0.08], 0.008);
        blend(&mut c, crease, 0.9 * g(2).min(1.0) * coverage(d, w));
    }
    // nose
    let nose_col = [id.skin[0] * 0.7, id.skin[1] * 0.62, id.skin[2] * 0.6];
    blend(&mut c, nose_col, 0.5 * coverage(capsule_sd(u, v, [0.5, 0.46], [0.5, id.nose_end - 0.02], 0.01), w));
    for s in [-1.0, 1.0] {
        blend(&mut c, nose_col, coverage(ellipse_sd(u, v, [0.5 + s * 0.035, id.nose_end], [0.02, 0.012]), w));
        // AU9 wrinkles
        let d = capsule_sd(u, v, [0.5 + s * 0.03, 0.45], [0.5 + s * 0.075, 0.52], 0.008);
        blend(&mut c, crease, 0.9 * g(5).min(1.0) * coverage(d, w));
    }
    // chin boss (AU17)
    let chin_c = [0.5, id.mouth_y + 0.12 - 0.025 * g(8)];
    blend(&mut c, crease, 0.75 * g(8).min(1.0) * coverage(ellipse_sd(u, v, chin_c, [0.07, 0.03]), w * 2.0));
    // mouth
    let mc = geo.mouth_center;
    let left = [mc[0] - geo.mouth_half_w, mc[1] + geo.corner_dy];
    let right = [mc[0] + geo.mouth_half_w, mc[1] + geo.corner_dy];
    let open = geo.mouth_open;
    let interior = coverage(ellipse_sd(u, v, [mc[0], mc[1] + geo.corner_dy * 0.3], [geo.mouth_half_w * 0.85, open / 2.0]), w);
    blend(&mut c, [0.3, 0.05, 0.06], interior);
    let top = [mc[0], mc[1] - open / 2.0];
    let bottom = [mc[0], mc[1] + open / 2.0];
    let lip_r = 0.011;
    let lips = [
        capsule_sd(u, v, left, top, lip_r),
        capsule_sd(u, v, top, right, lip_r),
        capsule_sd(u, v, left, bottom, lip_r),
        capsule_sd(u, v, bottom, right, lip_r),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    blend(&mut c, id.lip, coverage(lips, w));

    // person-specific marks
    for (mark, &a) in id.patterns.iter().zip(pat) {
        if a > 0.0 {
            blend(&mut c, mark.color, a.min(1.0) * coverage(ellipse_sd(u, v, mark.center, mark.radius), w * 1.5));
        }
    }
    let _ = face_cov;
    c
}

/// Canonical (aligned-frame) landmark positions in face units.
fn canonical_landmarks(id: &FaceIdentity, geo: &FaceGeometry) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(LANDMARK_COUNT);
    // jaw 0..=16
    for k in 0..17 {
        let phi = PI - k as f64 * PI / 16.0;
        pts.push([0.5 + id.face_rx * phi.cos(), id.face_cy + id.face_ry * phi.sin()]);
    }
    // brows 17..=26: image-left brow outer to inner, then right inner to outer
    for k in 0..5 {
        let t = k as f64 / 4.0;
        let (a, b) = (geo.brow_outer[0], geo.brow_inner[0]);
        pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    for k in 0..5 {
        let t = k as f64 / 4.0;
        let (a, b) = (geo.brow_inner[1], geo.brow_outer[1]);
        pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    // nose bridge 27..=30, nostrils 31..=35
    for k in 0..4 {
        pts.push([0.5, 0.44 + k as f64 * (id.nose_end - 0.46) / 3.0]);
    }
    for k in 0..5 {
        pts.push([0.5 + (k as f64 - 2.0) * 0.02, id.nose_end + 0.01]);
    }
    // eyes 36..=47: six points symmetric about each centre
    let half_eye = CANONICAL_EYE_SPACING / 2.0;
    for s in [-1.0, 1.0] {
        let ec = [0.5 + s * half_eye, CANONICAL_EYE_Y];
        for k in 0..6 {
            let a = PI - k as f64 * PI / 3.0;
            pts.push([ec[0] + id.eye_rx * a.cos(), ec[1] - geo.eye_ry * a.sin()]);
        }
    }
    // outer lip 48..=59, inner 60..=67
    let mc = geo.mouth_center;
    for k in 0..12 {
        let a = PI - k as f64 * PI / 6.0;
        let ry = geo.mouth_open / 2.0 + 0.012;
        pts.push([mc[0] + geo.mouth_half_w * a.cos(), mc[1] - ry * a.sin() + geo.corner_dy * a.cos().abs()]);
    }
    for k in 0..8 {
        let a = PI - k as f64 * PI / 4.0;
        pts.push([mc[0] + geo.mouth_half_w * 0.8 * a.cos(), mc[1] - geo.mouth_open / 2.0 * a.sin()]);
    }
    pts
}

/// Face units to canonical pixel coordinates of a `size`-pixel aligned frame.
fn face_to_pixel(p: [f64; 2], size: usize) -> [f64; 2] {
    [frac_to_pixel(p[0], size), frac_to_pixel(p[1], size)]
}

/// Render one frame. `pose` maps canonical pixel coordinates to source
/// pixel coordinates. Returns the image and source-space landmarks.
pub fn render_frame(
    id: &FaceIdentity,
    motion: &[f64; MAX_FACTORS],
    patterns: &[f64],
    pose: &Similarity,
    size: usize,
) -> (Image, LandmarkSet) {
    let geo = geometry(id, motion);
    let inv = pose.inverse();
    let mut img = Image::new(3, size, size);
    let w = 0.75 / size as f64;
    const SS: [f64; 2] = [-0.25, 0.25];
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0; 3];
            for dy in SS {
                for dx in SS {
                    let cp = inv.apply([x as f64 + dx, y as f64 + dy]);
                    let u = (cp[0] + 0.5) / size as f64;
                    let v = (cp[1] + 0.5) / size as f64;
                    let col = shade(id, &geo, motion, patterns, u, v, w);
                    for i in 0..3 {
                        acc[i] += col[i];
                    }
                }
            }
            for (ch, a) in acc.iter().enumerate() {
                img.set(ch, y, x, (a / 4.0) as f32);
            }
        }
    }
    let landmarks = canonical_landmarks(id, &geo)
        .into_iter()
        .map(|p| pose.apply(face_to_pixel(p, size)))
        .collect();
    (img, LandmarkSet::new(landmarks).expect("generator emits 68 finite points"))
}

fn bump(t: f64, onset: f64, len: f64) -> f64 {
    let x = (t - onset) / len;
    if (0.0..=1.0).contains(&x) {
        0.5 * (1.0 - (2.0 * PI * x).cos())
    } else {
        0.0
    }
}

struct Episode {
    onset: f64,
    len: f64,
    amp: f64,
}

fn draw_episodes(rng: &mut ChaCha8Rng, frames: usize, per_thousand: f64) -> Vec<Episode> {
    let p = (per_thousand / 1000.0).clamp(0.0, 1.0);
    let mut eps = Vec::new();
    for t in 0..frames {
        if rng.random_bool(p) {
            eps.push(Episode {
                onset: t as f64,
                len: rng.random_range(16.0..60.0),
                amp: rng.random_range(0.65..1.0),
            });
        }
    }
    eps
}

fn eval_episodes(eps: &[Episode], t: f64) -> f64 {
    eps.iter().map(|e| e.amp * bump(t, e.onset, e.len)).fold(0.0, f64::max)
}

/// Per-frame latent state of one subject's video.
pub struct SubjectTimeline {
    pub motion: Vec<[f64; MAX_FACTORS]>,
    pub patterns: Vec<Vec<f64>>,
}

pub fn subject_timeline(rng: &mut ChaCha8Rng, id: &FaceIdentity, config: &SynthConfig) -> SubjectTimeline {
    let n = config.frames_per_subject;
    let k = config.motion_factor_count;
    let ex = id.expressiveness;
    let singles: Vec<Vec<Episode>> = (0..k).map(|_| draw_episodes(rng, n, config.single_rate * ex)).collect();
    let templates: Vec<Vec<Episode>> = TEMPLATES
        .iter()
        .map(|_| draw_episodes(rng, n, config.template_rate * ex))
        .collect();
    let patterns: Vec<Vec<Episode>> = id
        .patterns
        .iter()
        .map(|_| draw_episodes(rng, n, config.pattern_rate))
        .collect();

    let mut motion = Vec::with_capacity(n);
    let mut pat_values = Vec::with_capacity(n);
    for t in 0..n {
        let tf = t as f64;
        let mut m = [0.0; MAX_FACTORS];
        for (f, eps) in singles.iter().enumerate() {
            m[f] = eval_episodes(eps, tf);
        }
        for (tpl, eps) in TEMPLATES.iter().zip(&templates) {
            let a = eval_episodes(eps, tf);
            for &(f, w) in tpl.iter() {
                if f < k {
                    m[f] = m[f].max(a * w);
                }
            }
        }
        let mut pv = Vec::with_capacity(patterns.len());
        for (mark, eps) in id.patterns.iter().zip(&patterns) {
            let a = eval_episodes(eps, tf);
            for &(f, w) in &mark.drives {
                if f < k {
                    m[f] = m[f].max(a * w);
                }
            }
            pv.push(a);
        }
        motion.push(m);
        pat_values.push(pv);
    }
    SubjectTimeline {
        motion,
        patterns: pat_values,
    }
}

/// Head pose track: slowly drifting rotation, scale and translation about
/// the image centre.
fn pose_track(rng: &mut ChaCha8Rng, n: usize, size: usize, config: &SynthConfig) -> Vec<Similarity> {
    let max_rot = config.pose_jitter_deg.to_radians();
    let max_shift = config.pose_shift_px;
    let phases: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..(2.0 * PI)));
    let periods: [f64; 4] = std::array::from_fn(|_| rng.random_range(80.0..240.0));
    let c = (size as f64 - 1.0) / 2.0;
    (0..n)
        .map(|t| {
            let s = |i: usize| (2.0 * PI * t as f64 / periods[i] + phases[i]).sin();
            let rot = max_rot * s(0);
            let scale = 1.0 + 0.04 * s(1) * (max_rot > 0.0) as u8 as f64;
            let (tx, ty) = (max_shift * s(2), max_shift * s(3));
            // rotate/scale about the centre, then shift
            let about = Similarity::from_scale_rotation(scale, rot, 0.0, 0.0);
            let moved = about.apply([c, c]);
            Similarity {
                tx: c - moved[0] + tx,
                ty: c - moved[1] + ty,
                ..about
            }
        })
        .collect()
}

fn detector_error(rng: &mut ChaCha8Rng, size: usize, j: f64) -> Similarity {
    let c = (size as f64 - 1.0) / 2.0;
    let rot = Similarity::from_scale_rotation(1.0, rng.random_range(-2.0 * j..=2.0 * j).to_radians(), 0.0, 0.0);
    let moved = rot.apply([c, c]);
    Similarity {
        tx: c - moved[0] + rng.random_range(-j..=j),
        ty: c - moved[1] + rng.random_range(-j..=j),
        ..rot
    }
}

/// Generate a synthetic dataset. Output is bit-identical for a given config.
pub fn synth_generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let size = config.image_size;
    let mut subjects = BTreeMap::new();
    let noise = Normal::new(0.0, config.pixel_noise.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    for s in 0..config.subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(s as u64));
        let id = FaceIdentity::random(&mut rng, config.person_specific_patterns, config.motion_factor_count);
        let timeline = subject_timeline(&mut rng, &id, config);
        let poses = pose_track(&mut rng, config.frames_per_subject, size, config);
        let name = subject_name(s);
        let mut frames = Vec::with_capacity(config.frames_per_subject);
        for t in 0..config.frames_per_subject {
            let motion = &timeline.motion[t];
            let pats = &timeline.patterns[t];
            let (mut img, mut lm) = render_frame(&id, motion, pats, &poses[t], size);
            if config.landmark_jitter_px > 0.0 {
                lm = lm.transformed(&detector_error(&mut rng, size, config.landmark_jitter_px));
            }
            let occluded = config.occlusion_rate > 0.0 && rng.random_bool(config.occlusion_rate);
            if occluded {
                occlude(&mut img, &mut rng);
            }
            if config.pixel_noise > 0.0 {
                for v in img.data.iter_mut() {
                    *v = (*v + noise.sample(&mut rng) as f32).clamp(0.0, 1.0);
                }
            }
            frames.push(FrameRef {
                identity: name.clone(),
                index: t as u32,
                labels: labels_from_motion(motion),
                landmark_status: if occluded { LandmarkStatus::Missing } else { LandmarkStatus::Present },
                source: FrameSource::Memory(Arc::new(img)),
                truth: Some(SynthTruth {
                    landmarks: (!occluded).then_some(lm),
                    motion: motion.iter().map(|&v| v as f32).collect(),
                    patterns: pats.iter().map(|&v| v as f32).collect(),
                    pose: poses[t],
                }),
            });
        }
        subjects.insert(name, frames);
    }
    Dataset::new(
        subjects,
        DataSource::Synthetic,
        DatasetMeta {
            frame_width: size,
            frame_height: size,
            channels: 3,
            fps: 20.0,
        },
    )
}

/// Cover the lower face with a grey block, as if a hand were in front of it.
fn occlude(img: &mut Image, rng: &mut ChaCha8Rng) {
    let n = img.width;
    let y0 = rng.random_range(n / 4..n / 2);
    for c in 0..3 {
        for y in y0..n {
            for x in 0..n {
                img.set(c, y, x, 0.2);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{align_face, AlignConfig, GroundTruthLandmarks};

    fn small() -> SynthConfig {
        SynthConfig {
            subjects: 2,
            frames_per_subject: 500,
            image_size: 32,
            seed: 7,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = synth_generate(&small()).unwrap();
        let b = synth_generate(&small()).unwrap();
        for id in a.identities() {
            for (fa, fb) in a.frames(&id).unwrap().iter().zip(b.frames(&id).unwrap()) {
                assert_eq!(fa.labels, fb.labels);
                assert_eq!(fa.load_pixels().unwrap().data, fb.load_pixels().unwrap().data);
                assert_eq!(fa.truth, fb.truth);
            }
        }
    }

    #[test]
    fn mouth_open_drives_both_lip_aus() {
        let ds = synth_generate(&small()).unwrap();
        let mut au25 = 0;
        let mut both = 0;
        for f in ds.subjects().values().flatten() {
            let m = f.truth.as_ref().unwrap().motion[MOUTH_OPEN];
            let b = f.labels.binary();
            assert_eq!(m > 0.5, b[10]);
            if b[10] {
                au25 += 1;
                both += b[11] as usize;
            }
        }
        assert!(au25 > 0);
        assert_eq!(au25, both, "P(AU26 | AU25) must be 1");
    }

    #[test]
    fn default_positive_rates_in_range() {
        let cfg = SynthConfig {
            seed: 11,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&cfg).unwrap();
        let frames: Vec<_> = ds.subjects().values().flatten().collect();
        for ch in 0..AU_COUNT {
            let pos = frames.iter().filter(|f| f.labels.is_active(ch)).count();
            let rate = pos as f64 / frames.len() as f64;
            assert!((0.02..=0.60).contains(&rate), "AU channel {ch} rate {rate}");
        }
    }

    #[test]
    fn invalid_configs() {
        let mut c = small();
        c.frames_per_subject = 0;
        assert!(matches!(synth_generate(&c), Err(Error::InvalidConfig(_))));
        let mut c = small();
        c.image_size = 7;
        assert!(matches!(synth_generate(&c), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn factor_threshold() {
        assert_eq!(factor_intensity(0.5), 1);
        assert_eq!(factor_intensity(0.51), 2);
        assert_eq!(factor_intensity(1.0), 5);
        assert_eq!(factor_intensity(0.0), 0);
    }

    #[test]
    fn ground_truth_landmarks_align_to_canonical() {
        let ds = synth_generate(&small()).unwrap();
        let f = &ds.frames("SN001").unwrap()[17];
        let lm = GroundTruthLandmarks.detect_for(f);
        let cfg = AlignConfig::with_size(32);
        let (_, t) = align_face(&f.load_pixels().unwrap(), &lm, &cfg).unwrap();
        let pose = f.truth.as_ref().unwrap().pose;
        // aligning undoes the head pose
        let c = pose.then(&t);
        assert!((c.a - 1.0).abs() < 1e-9 && c.b.abs() < 1e-9);
    }

    impl GroundTruthLandmarks {
        fn detect_for(&self, f: &FrameRef) -> LandmarkSet {
            f.truth.as_ref().unwrap().landmarks.clone().unwrap()
        }
    }
}
