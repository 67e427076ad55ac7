//! Schematic synthetic faces with known pupil positions and gaze zones.
//!
//! Faces are drawn at a 128-pixel reference scale: an elliptical face, two
//! elliptical scleras 44 px apart, a dark iris disk displaced horizontally by
//! the signed `iris_offset` (negative = image-left = left zone), a nose tip
//! 30 px below the eye line, and analytic 68-point landmarks.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::ManifestEntry;
use super::{write_file, PipelineError, Result};
use crate::heuristic::ZoneLabel;
use crate::imaging::{save_png, RgbImage};
use crate::landmarks::{sidecar_path, LandmarkSet, LANDMARK_COUNT};
use crate::nnet::GazeVector;
use crate::Point;

const REFERENCE_SIZE: f64 = 128.0;
const EYE_HALF_SPACING: f64 = 22.0;
const SCLERA_AXES: (f64, f64) = (15.0, 8.0);
const IRIS_RADIUS: f64 = 6.0;
const FACE_AXES: (f64, f64) = (46.0, 58.0);
const EYE_ABOVE_CENTER: f64 = 10.0;
const NOSE_BELOW_EYES: f64 = 30.0;
const SUPERSAMPLE: usize = 4;
/// Degrees of yaw per pixel of iris offset, for the gaze-vector ground truth.
const YAW_PER_PIXEL: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFaceSpec {
    /// Horizontal iris displacement in reference pixels; the sign selects the
    /// zone and zero means center.
    pub iris_offset: f64,
    pub vertical_offset: f64,
    pub roll: f64,
    pub noise_sigma: f64,
    /// Face-center displacement in reference pixels.
    pub jitter: (f64, f64),
    pub seed: u64,
}

impl SyntheticFaceSpec {
    pub fn zone(&self) -> ZoneLabel {
        if self.iris_offset < 0.0 {
            ZoneLabel::Left
        } else if self.iris_offset > 0.0 {
            ZoneLabel::Right
        } else {
            ZoneLabel::Center
        }
    }

    pub fn gaze(&self) -> GazeVector {
        let yaw = (self.iris_offset * YAW_PER_PIXEL).to_radians();
        let pitch = (-self.vertical_offset * YAW_PER_PIXEL).to_radians();
        GazeVector::new(
            yaw.sin() * pitch.cos(),
            -pitch.sin(),
            yaw.cos() * pitch.cos(),
        )
    }
}

/// Per-subject appearance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectLook {
    pub skin: [f64; 3],
    pub iris: [f64; 3],
    pub sclera: [f64; 3],
    pub background: [f64; 3],
}

impl Default for SubjectLook {
    fn default() -> Self {
        Self {
            skin: [200.0, 170.0, 150.0],
            iris: [45.0, 38.0, 34.0],
            sclera: [242.0, 240.0, 236.0],
            background: [96.0, 104.0, 116.0],
        }
    }
}

impl SubjectLook {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let base = Self::default();
        let skin_shift = rng.random_range(-18.0..18.0);
        let iris_shift = rng.random_range(-10.0..10.0);
        let bg_shift = rng.random_range(-25.0..25.0);
        Self {
            skin: base.skin.map(|v| v + skin_shift),
            iris: base.iris.map(|v| v + iris_shift),
            sclera: base.sclera,
            background: base.background.map(|v| v + bg_shift),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderedFace {
    pub image: RgbImage,
    pub landmarks: LandmarkSet,
    /// Ground-truth pupil centers (image-left eye first).
    pub pupils: (Point, Point),
    pub zone: ZoneLabel,
    pub gaze: GazeVector,
}

struct Geometry {
    scale: f64,
    center: Point,
    roll_cos: f64,
    roll_sin: f64,
}

impl Geometry {
    fn new(size: usize, spec: &SyntheticFaceSpec) -> Self {
        let scale = size as f64 / REFERENCE_SIZE;
        let center = Point::new(
            (64.0 + spec.jitter.0) * scale,
            (68.0 + spec.jitter.1) * scale,
        );
        let r = spec.roll.to_radians();
        Self {
            scale,
            center,
            roll_cos: r.cos(),
            roll_sin: r.sin(),
        }
    }

    /// Face-frame reference coordinates (relative to face center) to image.
    fn to_image(&self, u: f64, v: f64) -> Point {
        let (u, v) = (u * self.scale, v * self.scale);
        Point::new(
            self.center.x + u * self.roll_cos - v * self.roll_sin,
            self.center.y + u * self.roll_sin + v * self.roll_cos,
        )
    }

    fn to_face(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.center.x, y - self.center.y);
        (
            (dx * self.roll_cos + dy * self.roll_sin) / self.scale,
            (-dx * self.roll_sin + dy * self.roll_cos) / self.scale,
        )
    }
}

fn in_ellipse(u: f64, v: f64, cu: f64, cv: f64, a: f64, b: f64) -> bool {
    let (du, dv) = ((u - cu) / a, (v - cv) / b);
    du * du + dv * dv <= 1.0
}

fn scene_color(u: f64, v: f64, spec: &SyntheticFaceSpec, look: &SubjectLook) -> [f64; 3] {
    let eye_v = -EYE_ABOVE_CENTER;
    for side in [-1.0, 1.0] {
        let eu = side * EYE_HALF_SPACING;
        if in_ellipse(u, v, eu, eye_v, SCLERA_AXES.0, SCLERA_AXES.1) {
            let (iu, iv) = (eu + spec.iris_offset, eye_v + spec.vertical_offset);
            if (u - iu).powi(2) + (v - iv).powi(2) <= IRIS_RADIUS * IRIS_RADIUS {
                return look.iris;
            }
            return look.sclera;
        }
        if in_ellipse(u, v, eu, eye_v - 15.0, 16.0, 2.5) {
            return look.skin.map(|c| c * 0.55);
        }
    }
    if !in_ellipse(u, v, 0.0, 0.0, FACE_AXES.0, FACE_AXES.1) {
        return look.background;
    }
    let nose_v = eye_v + NOSE_BELOW_EYES;
    if in_ellipse(u, v, -4.0, nose_v + 3.0, 2.5, 1.5)
        || in_ellipse(u, v, 4.0, nose_v + 3.0, 2.5, 1.5)
    {
        return look.skin.map(|c| c * 0.6);
    }
    if in_ellipse(u, v, 0.0, eye_v + 48.0, 16.0, 5.0) {
        return [look.skin[0] * 0.85, look.skin[1] * 0.5, look.skin[2] * 0.5];
    }
    look.skin
}

fn face_landmarks(g: &Geometry) -> Vec<Point> {
    let eye_v = -EYE_ABOVE_CENTER;
    let nose_v = eye_v + NOSE_BELOW_EYES;
    let mut pts = Vec::with_capacity(LANDMARK_COUNT);
    // jaw, left to right through the chin
    for i in 0..17 {
        let phi = std::f64::consts::PI * (1.0 - i as f64 / 16.0);
        pts.push(g.to_image(FACE_AXES.0 * phi.cos(), FACE_AXES.1 * phi.sin()));
    }
    // brows
    for side in [-1.0, 1.0] {
        for i in 0..5 {
            let t = i as f64 / 4.0;
            let u = side * EYE_HALF_SPACING + (t - 0.5) * 30.0;
            let bump = 1.0 - (2.0 * t - 1.0).powi(2);
            pts.push(g.to_image(u, eye_v - 14.0 - 2.5 * bump));
        }
    }
    // nose bridge down to the tip (index 30)
    for i in 0..4 {
        pts.push(g.to_image(0.0, eye_v + NOSE_BELOW_EYES * (i as f64 + 1.0) / 4.0));
    }
    for du in [-8.0, -4.0, 0.0, 4.0, 8.0] {
        pts.push(g.to_image(du, nose_v + 4.0));
    }
    // eyes: image-left eye from its outer corner, right eye from its inner
    // corner, both clockwise on the sclera outline
    for side in [-1.0, 1.0] {
        let eu = side * EYE_HALF_SPACING;
        for deg in [180.0f64, 120.0, 60.0, 0.0, 300.0, 240.0] {
            let t = deg.to_radians();
            pts.push(g.to_image(
                eu + SCLERA_AXES.0 * t.cos(),
                eye_v - SCLERA_AXES.1 * t.sin(),
            ));
        }
    }
    let mouth_v = eye_v + 48.0;
    for i in 0..12 {
        let t = std::f64::consts::PI * (1.0 - i as f64 / 6.0);
        pts.push(g.to_image(16.0 * t.cos(), mouth_v - 5.0 * t.sin()));
    }
    for i in 0..8 {
        let t = std::f64::consts::PI * (1.0 - i as f64 / 4.0);
        pts.push(g.to_image(11.0 * t.cos(), mouth_v - 2.0 * t.sin()));
    }
    debug_assert_eq!(pts.len(), LANDMARK_COUNT);
    pts
}

/// Renders one face at `size` x `size` pixels.
pub fn render_face(spec: &SyntheticFaceSpec, look: &SubjectLook, size: usize) -> RenderedFace {
    let g = Geometry::new(size, spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    let mut data = Vec::with_capacity(size * size * 3);
    let inv = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                    let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                    let (u, v) = g.to_face(px, py);
                    let c = scene_color(u, v, spec, look);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for a in acc {
                let n = if spec.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                data.push((a * inv + n).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let image = RgbImage::new(size, size, data).expect("size checked");
    let landmarks = LandmarkSet::new(face_landmarks(&g)).expect("68 points");
    let eye_v = -EYE_ABOVE_CENTER + spec.vertical_offset;
    let pupils = (
        g.to_image(-EYE_HALF_SPACING + spec.iris_offset, eye_v),
        g.to_image(EYE_HALF_SPACING + spec.iris_offset, eye_v),
    );
    RenderedFace {
        image,
        landmarks,
        pupils,
        zone: spec.zone(),
        gaze: spec.gaze(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub videos_per_subject: usize,
    pub frames_per_video: usize,
    pub image_size: usize,
    pub iris_offset_min: f64,
    pub iris_offset_max: f64,
    pub vertical_offset_max: f64,
    pub roll_max: f64,
    pub noise_sigma_max: f64,
    pub face_jitter: f64,
    /// Frames per constant-zone block within a video.
    pub block_min: usize,
    pub block_max: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 6,
            videos_per_subject: 2,
            frames_per_video: 30,
            image_size: 128,
            iris_offset_min: 3.5,
            iris_offset_max: 6.0,
            vertical_offset_max: 1.0,
            roll_max: 0.0,
            noise_sigma_max: 8.0,
            face_jitter: 3.0,
            block_min: 6,
            block_max: 12,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::Config(format!("synthetic corpus: {m}")));
        if self.subjects == 0 || self.videos_per_subject == 0 || self.frames_per_video == 0 {
            return bad("sizes must be at least 1");
        }
        if self.image_size < 32 {
            return bad("image size must be at least 32");
        }
        if !(0.0 < self.iris_offset_min
            && self.iris_offset_min <= self.iris_offset_max
            && self.iris_offset_max <= 6.0)
        {
            return bad("iris offsets must satisfy 0 < min <= max <= 6");
        }
        if self.vertical_offset_max.abs() > 1.0
            || self.roll_max.abs() > 30.0
            || self.face_jitter.abs() > 10.0
        {
            return bad("vertical offset, roll or jitter out of range");
        }
        if self.noise_sigma_max < 0.0 || self.block_min == 0 || self.block_min > self.block_max {
            return bad("invalid noise or block sizes");
        }
        Ok(())
    }

    /// Draws random render parameters for a face looking at `zone`.
    pub fn random_spec<R: Rng>(&self, rng: &mut R, zone: ZoneLabel) -> SyntheticFaceSpec {
        let magnitude = rng.random_range(self.iris_offset_min..=self.iris_offset_max);
        let iris_offset = match zone {
            ZoneLabel::Left => -magnitude,
            ZoneLabel::Right => magnitude,
            ZoneLabel::Center => 0.0,
        };
        let sym = |rng: &mut R, m: f64| {
            if m > 0.0 {
                rng.random_range(-m..=m)
            } else {
                0.0
            }
        };
        SyntheticFaceSpec {
            iris_offset,
            vertical_offset: sym(rng, self.vertical_offset_max),
            roll: sym(rng, self.roll_max),
            noise_sigma: rng.random_range(0.0..=self.noise_sigma_max),
            jitter: (sym(rng, self.face_jitter), sym(rng, self.face_jitter)),
            seed: rng.random(),
        }
    }
}

/// One row of `ground_truth.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub image_path: String,
    pub subject_id: String,
    pub video_id: String,
    pub frame_index: u64,
    pub zone: String,
    pub iris_offset: f64,
    pub roll: f64,
    pub noise_sigma: f64,
    pub left_x: f64,
    pub left_y: f64,
    pub right_x: f64,
    pub right_y: f64,
    pub gaze_x: f64,
    pub gaze_y: f64,
    pub gaze_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub manifest_path: PathBuf,
    pub ground_truth_path: PathBuf,
    pub frames: usize,
    pub zone_counts: [usize; 3],
}

struct PlannedFrame {
    subject: String,
    video: String,
    frame: u64,
    spec: SyntheticFaceSpec,
    look: SubjectLook,
}

fn plan(cfg: &SynthConfig) -> Vec<PlannedFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut frames = Vec::new();
    for s in 0..cfg.subjects {
        let look = SubjectLook::random(&mut rng);
        let subject = format!("s{s:02}");
        for v in 0..cfg.videos_per_subject {
            let video = format!("{subject}_v{v}");
            let mut zone = ZoneLabel::ALL[rng.random_range(0..3)];
            let mut left_in_block = rng.random_range(cfg.block_min..=cfg.block_max);
            for f in 0..cfg.frames_per_video {
                if left_in_block == 0 {
                    zone = ZoneLabel::ALL[rng.random_range(0..3)];
                    left_in_block = rng.random_range(cfg.block_min..=cfg.block_max);
                }
                left_in_block -= 1;
                let spec = cfg.random_spec(&mut rng, zone);
                frames.push(PlannedFrame {
                    subject: subject.clone(),
                    video: video.clone(),
                    frame: f as u64,
                    spec,
                    look,
                });
            }
        }
    }
    frames
}

/// Writes images, landmark sidecars, `manifest.jsonl` and `ground_truth.csv`
/// under `out_dir`. Output is a pure function of the configuration.
pub fn gen_synthetic_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<CorpusSummary> {
    cfg.validate()?;
    let frames = plan(cfg);
    let rows = frames
        .par_iter()
        .map(|p| -> Result<(ManifestEntry, GroundTruthRow)> {
            let face = render_face(&p.spec, &p.look, cfg.image_size);
            let rel = format!("images/{}/{}/frame_{:05}.png", p.subject, p.video, p.frame);
            let image_path = out_dir.join(&rel);
            if let Some(parent) = image_path.parent() {
                std::fs::create_dir_all(parent).map_err(super::io_err(parent))?;
            }
            save_png(&image_path, &face.image)?;
            let lms = sidecar_path(&rel);
            write_file(&out_dir.join(&lms), face.landmarks.to_text())?;
            let entry = ManifestEntry {
                image_path: rel.clone(),
                landmark_path: lms.to_string_lossy().into_owned(),
                subject_id: p.subject.clone(),
                video_id: p.video.clone(),
                frame_index: p.frame,
            };
            let row = GroundTruthRow {
                image_path: rel,
                subject_id: p.subject.clone(),
                video_id: p.video.clone(),
                frame_index: p.frame,
                zone: face.zone.as_str().to_string(),
                iris_offset: p.spec.iris_offset,
                roll: p.spec.roll,
                noise_sigma: p.spec.noise_sigma,
                left_x: face.pupils.0.x,
                left_y: face.pupils.0.y,
                right_x: face.pupils.1.x,
                right_y: face.pupils.1.y,
                gaze_x: face.gaze.x,
                gaze_y: face.gaze.y,
                gaze_z: face.gaze.z,
            };
            Ok((entry, row))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = String::new();
    let mut zone_counts = [0; 3];
    let gt_path = out_dir.join("ground_truth.csv");
    let mut gt = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for (entry, row) in &rows {
        manifest.push_str(&serde_json::to_string(entry).expect("plain struct"));
        manifest.push('\n');
        zone_counts[row
            .zone
            .parse::<ZoneLabel>()
            .map(|z| z.index())
            .unwrap_or(2)] += 1;
        gt.serialize(row)
            .map_err(|e| super::parse_err(&gt_path, e))?;
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    write_file(&manifest_path, manifest)?;
    write_file(
        &gt_path,
        gt.into_inner().map_err(|e| super::parse_err(&gt_path, e))?,
    )?;
    Ok(CorpusSummary {
        manifest_path,
        ground_truth_path: gt_path,
        frames: rows.len(),
        zone_counts,
    })
}

/// Reads `ground_truth.csv`.
pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| super::parse_err(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<GroundTruthRow>, _>>()
        .map_err(|e| super::parse_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(offset: f64) -> SyntheticFaceSpec {
        SyntheticFaceSpec {
            iris_offset: offset,
            vertical_offset: 0.0,
            roll: 0.0,
            noise_sigma: 0.0,
            jitter: (0.0, 0.0),
            seed: 1,
        }
    }

    #[test]
    fn zone_follows_offset_sign() {
        assert_eq!(spec(-4.0).zone(), ZoneLabel::Left);
        assert_eq!(spec(0.0).zone(), ZoneLabel::Center);
        assert_eq!(spec(4.0).zone(), ZoneLabel::Right);
    }

    #[test]
    fn iris_is_drawn_at_ground_truth() {
        let face = render_face(&spec(-4.0), &SubjectLook::default(), 128);
        let (l, r) = face.pupils;
        assert_eq!((l.x, l.y), (64.0 - 26.0, 58.0));
        assert_eq!(r.x, 64.0 + 18.0);
        let gray = face.image.to_gray();
        assert!(gray.get(38, 58) < 60 && gray.get(82, 58) < 60);
        assert!(gray.get(42 + 10, 58) > 200);
    }

    #[test]
    fn landmarks_match_layout() {
        let face = render_face(&spec(0.0), &SubjectLook::default(), 128);
        let lm = &face.landmarks;
        assert_eq!(lm.get(36), Point::new(64.0 - 37.0, 58.0));
        assert_eq!(lm.get(39), Point::new(64.0 - 7.0, 58.0));
        assert_eq!(lm.get(42), Point::new(64.0 + 7.0, 58.0));
        assert_eq!(lm.get(45), Point::new(64.0 + 37.0, 58.0));
        assert_eq!(lm.get(30), Point::new(64.0, 88.0));
        assert!(lm.get(37).y < 58.0 && lm.get(41).y > 58.0);
    }

    #[test]
    fn same_seed_same_pixels() {
        let s = SyntheticFaceSpec {
            noise_sigma: 6.0,
            ..spec(3.0)
        };
        let a = render_face(&s, &SubjectLook::default(), 64);
        let b = render_face(&s, &SubjectLook::default(), 64);
        assert_eq!(a.image, b.image);
    }

    #[test]
    fn gaze_sign_follows_offset() {
        assert!(spec(-4.0).gaze().x < 0.0);
        assert!(spec(4.0).gaze().x > 0.0);
        assert_eq!(spec(0.0).gaze().x, 0.0);
        assert!((spec(5.0).gaze().norm() - 1.0).abs() < 1e-12);
    }
}
