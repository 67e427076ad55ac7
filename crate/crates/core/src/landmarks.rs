//! 68-point facial landmark sidecars and the eye/nose anchors derived from
//! them.
//!
//! Index convention (observer's view): 36-41 image-left eye, 42-47
//! image-right eye, 30 nose tip. `.lms` sidecars hold 68 lines of `x y`.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{self, GrayImage, ImagingError, RgbImage};
use crate::{Point, Rect};

pub const LANDMARK_COUNT: usize = 68;
pub const NOSE_TIP: usize = 30;
pub const LEFT_EYE: std::ops::Range<usize> = 36..42;
pub const RIGHT_EYE: std::ops::Range<usize> = 42..48;
pub const LEFT_EYE_OUTER: usize = 36;
pub const LEFT_EYE_INNER: usize = 39;
pub const RIGHT_EYE_INNER: usize = 42;
pub const RIGHT_EYE_OUTER: usize = 45;

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("landmark file {0} does not exist")]
    MissingFile(PathBuf),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("expected 68 landmark points, found {found}")]
    WrongPointCount { found: usize },
    #[error("line {line}: cannot parse {text:?} as `x y`")]
    NonNumeric { line: usize, text: String },
    #[error("{side} eye landmarks are degenerate (zero-area hull)")]
    DegenerateEye { side: Side },
    #[error(transparent)]
    Image(#[from] ImagingError),
}

pub type Result<T> = std::result::Result<T, LandmarkError>;

/// Eye side in image (observer) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point>,
    clamped: Vec<bool>,
}

/// Index permutation that maps the 68-point scheme onto its horizontal mirror.
const MIRROR: [usize; LANDMARK_COUNT] = [
    16, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0, // jaw
    26, 25, 24, 23, 22, 21, 20, 19, 18, 17, // brows
    27, 28, 29, 30, // nose bridge
    35, 34, 33, 32, 31, // nostrils
    45, 44, 43, 42, 47, 46, // left eye <- right eye
    39, 38, 37, 36, 41, 40, // right eye <- left eye
    54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55, // outer lip
    64, 63, 62, 61, 60, 67, 66, 65, // inner lip
];

impl LandmarkSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(LandmarkError::WrongPointCount {
                found: points.len(),
            });
        }
        Ok(Self {
            clamped: vec![false; points.len()],
            points,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut points = Vec::with_capacity(LANDMARK_COUNT);
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let mut it = trimmed.split_whitespace();
            let parsed = match (it.next(), it.next(), it.next()) {
                (Some(a), Some(b), None) => a.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
                _ => None,
            };
            match parsed {
                Some((x, y)) if x.is_finite() && y.is_finite() => points.push(Point::new(x, y)),
                _ => {
                    return Err(LandmarkError::NonNumeric {
                        line: i + 1,
                        text: line.to_string(),
                    })
                }
            }
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn get(&self, index: usize) -> Point {
        self.points[index]
    }

    pub fn is_clamped(&self, index: usize) -> bool {
        self.clamped[index]
    }

    pub fn any_clamped(&self) -> bool {
        self.clamped.iter().any(|&c| c)
    }

    /// Clamps every point into `[0, width-1] x [0, height-1]`, flagging the
    /// ones that moved.
    pub fn clamp_to(&mut self, width: usize, height: usize) {
        let (xmax, ymax) = ((width - 1) as f64, (height - 1) as f64);
        for (p, flag) in self.points.iter_mut().zip(self.clamped.iter_mut()) {
            let q = Point::new(p.x.clamp(0.0, xmax), p.y.clamp(0.0, ymax));
            if q != *p {
                *flag = true;
                *p = q;
            }
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> LandmarkSet {
        LandmarkSet {
            points: self.points.iter().map(|p| p.translate(dx, dy)).collect(),
            clamped: self.clamped.clone(),
        }
    }

    /// Mirror about the vertical axis of a `width`-wide image; indices are
    /// permuted so that 36-41 is still the image-left eye.
    pub fn mirrored(&self, width: usize) -> LandmarkSet {
        let xmax = (width - 1) as f64;
        let mut points = vec![Point::default(); LANDMARK_COUNT];
        let mut clamped = vec![false; LANDMARK_COUNT];
        for (dst, &src) in MIRROR.iter().enumerate() {
            let p = self.points[src];
            points[dst] = Point::new(xmax - p.x, p.y);
            clamped[dst] = self.clamped[src];
        }
        LandmarkSet { points, clamped }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&format!("{} {}\n", p.x, p.y));
        }
        out
    }
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<LandmarkSet> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(LandmarkError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| LandmarkError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    LandmarkSet::parse(&text)
}

/// Loads a sidecar and clamps it to a `width x height` image.
pub fn load_landmarks_within(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
) -> Result<LandmarkSet> {
    let mut set = load_landmarks(path)?;
    set.clamp_to(width, height);
    Ok(set)
}

pub fn save_landmarks(path: impl AsRef<Path>, set: &LandmarkSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, set.to_text()).map_err(|source| LandmarkError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Sidecar path convention: same basename, `.lms` extension.
pub fn sidecar_path(image_path: impl AsRef<Path>) -> PathBuf {
    image_path.as_ref().with_extension("lms")
}

/// One face image with its landmarks and stream metadata.
#[derive(Debug, Clone)]
pub struct FaceSample {
    pub rgb: RgbImage,
    pub image: GrayImage,
    pub landmarks: LandmarkSet,
    pub subject_id: String,
    pub video_id: String,
    pub frame_index: u64,
}

impl FaceSample {
    /// Builds a sample, clamping the landmarks to the image.
    pub fn new(rgb: RgbImage, mut landmarks: LandmarkSet) -> Self {
        let image = rgb.to_gray();
        landmarks.clamp_to(image.width(), image.height());
        Self {
            rgb,
            image,
            landmarks,
            subject_id: String::new(),
            video_id: String::new(),
            frame_index: 0,
        }
    }

    pub fn with_ids(mut self, subject: &str, video: &str, frame: u64) -> Self {
        self.subject_id = subject.to_string();
        self.video_id = video.to_string();
        self.frame_index = frame;
        self
    }

    pub fn load(image_path: impl AsRef<Path>, landmark_path: impl AsRef<Path>) -> Result<Self> {
        let rgb = imaging::load_rgb(image_path)?;
        let landmarks = load_landmarks(landmark_path)?;
        Ok(Self::new(rgb, landmarks))
    }

    /// Horizontal mirror of image and landmarks.
    pub fn mirrored(&self) -> FaceSample {
        FaceSample {
            rgb: self.rgb.mirrored(),
            image: self.image.mirrored(),
            landmarks: self.landmarks.mirrored(self.image.width()),
            subject_id: self.subject_id.clone(),
            video_id: self.video_id.clone(),
            frame_index: self.frame_index,
        }
    }
}

/// Which landmark pair stands for the eye corners in the head-pose angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CornerMode {
    #[default]
    Outer,
    Inner,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EyeConfig {
    /// Fractional padding added to each side of the eye-landmark hull.
    pub padding: f64,
}

impl Default for EyeConfig {
    fn default() -> Self {
        Self { padding: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeRegion {
    pub side: Side,
    pub bbox: Rect,
    pub contour_height: f64,
    pub inner_corner: Point,
    pub outer_corner: Point,
}

impl EyeRegion {
    pub fn corner(&self, mode: CornerMode) -> Point {
        match mode {
            CornerMode::Outer => self.outer_corner,
            CornerMode::Inner => self.inner_corner,
        }
    }
}

fn eye_region(
    lm: &LandmarkSet,
    side: Side,
    width: usize,
    height: usize,
    cfg: &EyeConfig,
) -> Result<EyeRegion> {
    let (range, inner, outer) = match side {
        Side::Left => (LEFT_EYE, LEFT_EYE_INNER, LEFT_EYE_OUTER),
        Side::Right => (RIGHT_EYE, RIGHT_EYE_INNER, RIGHT_EYE_OUTER),
    };
    let pts = &lm.points()[range];
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in pts {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let (hull_w, hull_h) = (x1 - x0, y1 - y0);
    if hull_w <= 0.0 || hull_h <= 0.0 {
        return Err(LandmarkError::DegenerateEye { side });
    }
    let (px, py) = (hull_w * cfg.padding, hull_h * cfg.padding);
    let bbox = Rect::from_span_clipped(x0 - px, y0 - py, x1 + px, y1 + py, width, height)
        .ok_or(LandmarkError::DegenerateEye { side })?;
    Ok(EyeRegion {
        side,
        bbox,
        contour_height: hull_h,
        inner_corner: lm.get(inner),
        outer_corner: lm.get(outer),
    })
}

/// Left (image-left) and right eye regions from the six landmarks of each eye.
pub fn extract_eyes(sample: &FaceSample, cfg: &EyeConfig) -> Result<(EyeRegion, EyeRegion)> {
    let (w, h) = (sample.image.width(), sample.image.height());
    Ok((
        eye_region(&sample.landmarks, Side::Left, w, h, cfg)?,
        eye_region(&sample.landmarks, Side::Right, w, h, cfg)?,
    ))
}

/// Nose tip (landmark 30) and whether it was clamped into the image.
pub fn nose_anchor(sample: &FaceSample) -> (Point, bool) {
    (
        sample.landmarks.get(NOSE_TIP),
        sample.landmarks.is_clamped(NOSE_TIP),
    )
}
