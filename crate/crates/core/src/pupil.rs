//! Two-stage pupil-center localizer and the Jesorsky localization error.
//!
//! Stage one thresholds the eye crop with Otsu and takes the centroid of the
//! largest dark blob. Stage two re-crops a square around that estimate,
//! applies adaptive thresholding, Canny and a circular Hough transform, and
//! the final center is the midpoint of both estimates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{
    adaptive_threshold, blob_centers, canny, hough_circles, otsu_threshold, BitMask, CannyParams,
    GrayImage, HoughParams, ImagingError,
};
use crate::landmarks::{extract_eyes, EyeConfig, EyeRegion, FaceSample, LandmarkError, Side};
use crate::{Point, Rect};

#[derive(Debug, Error)]
pub enum PupilError {
    #[error("no iris blob found in the {side} eye")]
    NoIris { side: Side },
    #[error("secondary ROI around ({x:.1}, {y:.1}) lies outside the image")]
    RoiOutOfBounds { x: f64, y: f64 },
    #[error("ground-truth pupils coincide; interocular distance is zero")]
    DegenerateGroundTruth,
    #[error(transparent)]
    Landmarks(#[from] LandmarkError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub type Result<T> = std::result::Result<T, PupilError>;

/// How the pair of pupil distances is folded into one error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JesorskyForm {
    /// `max(d_l, d_r) / ||C_l - C_r||`, the conventional worst-eye error.
    #[default]
    WorstEye,
    /// `(d_l - d_r) / ||C_l - C_r||`, the difference form kept for audit.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PupilConfig {
    pub eye: EyeConfig,
    /// Pixels added to half the eye-contour height to size the secondary ROI.
    pub offset: f64,
    /// Adaptive-threshold window; `None` sizes it from the crop length.
    pub adaptive_window: Option<usize>,
    pub adaptive_offset: f64,
    pub canny: CannyParams,
    pub vote_fraction: f64,
    pub jesorsky: JesorskyForm,
}

impl Default for PupilConfig {
    fn default() -> Self {
        Self {
            eye: EyeConfig::default(),
            offset: 5.0,
            adaptive_window: None,
            adaptive_offset: 20.0,
            canny: CannyParams::default(),
            vote_fraction: 0.6,
            jesorsky: JesorskyForm::WorstEye,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    PrimaryOnly,
    Averaged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PupilEstimate {
    pub center: Point,
    pub primary: Point,
    pub secondary: Option<Point>,
    pub provenance: Provenance,
}

impl PupilEstimate {
    pub fn combine(primary: Point, secondary: Option<Point>) -> Self {
        match secondary {
            Some(s) => PupilEstimate {
                center: primary.midpoint(s),
                primary,
                secondary,
                provenance: Provenance::Averaged,
            },
            None => PupilEstimate {
                center: primary,
                primary,
                secondary: None,
                provenance: Provenance::PrimaryOnly,
            },
        }
    }
}

/// Pupil centers of both eyes in full-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PupilPair {
    pub left: PupilEstimate,
    pub right: PupilEstimate,
}

impl PupilPair {
    pub fn centers(&self) -> (Point, Point) {
        (self.left.center, self.right.center)
    }
}

/// Otsu-threshold the eye crop (dark side as foreground) and return the
/// centroid of the largest blob in image coordinates.
pub fn locate_primary(eye: &EyeRegion, img: &GrayImage) -> Result<Point> {
    let crop = img.crop(eye.bbox)?;
    let t = match otsu_threshold(&crop) {
        Ok(t) => t,
        Err(ImagingError::DegenerateHistogram) => {
            return Err(PupilError::NoIris { side: eye.side })
        }
        Err(e) => return Err(e.into()),
    };
    let mask = BitMask::from_fn(crop.width(), crop.height(), |x, y| crop.get(x, y) <= t);
    let blob = blob_centers(&mask)
        .into_iter()
        .next()
        .ok_or(PupilError::NoIris { side: eye.side })?;
    Ok(blob
        .centroid
        .translate(eye.bbox.x as f64, eye.bbox.y as f64))
}

/// Half-width of the secondary ROI: half the eye-contour height plus
/// `offset`, rounded half-up.
pub fn crop_length(contour_height: f64, offset: f64) -> u32 {
    (contour_height / 2.0 + offset + 0.5).floor().max(0.0) as u32
}

/// Refines a primary estimate with a Hough circle fitted inside the square ROI
/// of half-width `crop_len`. Returns `Ok(None)` when no circle clears the vote
/// threshold or the clipped ROI is too small to search.
pub fn locate_secondary(
    primary: Point,
    img: &GrayImage,
    crop_len: u32,
    cfg: &PupilConfig,
) -> Result<Option<Point>> {
    let half = crop_len as f64;
    let (cx, cy) = (primary.x.round(), primary.y.round());
    let roi = Rect::from_span_clipped(
        cx - half,
        cy - half,
        cx + half,
        cy + half,
        img.width(),
        img.height(),
    )
    .ok_or(PupilError::RoiOutOfBounds {
        x: primary.x,
        y: primary.y,
    })?;
    let crop = img.crop(roi)?;
    let min_dim = crop.width().min(crop.height());

    let mut window = cfg
        .adaptive_window
        .unwrap_or(crop_len as usize | 1)
        .min(min_dim);
    if window % 2 == 0 {
        window -= 1;
    }
    let r_min = (crop_len / 4).max(2);
    let r_max = crop_len.min((min_dim / 2) as u32);
    if window < 3 || r_min > r_max {
        return Ok(None);
    }

    let mask = adaptive_threshold(&crop, window, cfg.adaptive_offset)?;
    let edges = canny(&mask.to_gray(), cfg.canny.low, cfg.canny.high)?;
    let params = HoughParams {
        r_min,
        r_max,
        vote_fraction: cfg.vote_fraction,
    };
    let best = hough_circles(&edges, &params)?.into_iter().next();
    Ok(best.map(|c| Point::new(c.cx + roi.x as f64, c.cy + roi.y as f64)))
}

fn locate_eye(eye: &EyeRegion, img: &GrayImage, cfg: &PupilConfig) -> Result<PupilEstimate> {
    let primary = locate_primary(eye, img)?;
    let len = crop_length(eye.contour_height, cfg.offset);
    let secondary = if len >= 3 {
        match locate_secondary(primary, img, len, cfg) {
            Ok(s) => s,
            Err(PupilError::RoiOutOfBounds { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(PupilEstimate::combine(primary, secondary))
}

/// Localizes both pupils of a face sample.
pub fn locate_pupils(sample: &FaceSample, cfg: &PupilConfig) -> Result<PupilPair> {
    let (left_eye, right_eye) = extract_eyes(sample, &cfg.eye)?;
    Ok(PupilPair {
        left: locate_eye(&left_eye, &sample.image, cfg)?,
        right: locate_eye(&right_eye, &sample.image, cfg)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JesorskyInputs {
    pub predicted: (Point, Point),
    pub ground_truth: (Point, Point),
    pub d_left: f64,
    pub d_right: f64,
}

impl JesorskyInputs {
    pub fn new(predicted: (Point, Point), ground_truth: (Point, Point)) -> Self {
        Self {
            predicted,
            ground_truth,
            d_left: predicted.0.distance(ground_truth.0),
            d_right: predicted.1.distance(ground_truth.1),
        }
    }
}

pub fn jesorsky_error(inputs: &JesorskyInputs, form: JesorskyForm) -> Result<f64> {
    let interocular = inputs.ground_truth.0.distance(inputs.ground_truth.1);
    if interocular <= 0.0 {
        return Err(PupilError::DegenerateGroundTruth);
    }
    let num = match form {
        JesorskyForm::WorstEye => inputs.d_left.max(inputs.d_right),
        JesorskyForm::Literal => inputs.d_left - inputs.d_right,
    };
    Ok(num / interocular)
}

pub const JESORSKY_THRESHOLDS: [f64; 3] = [0.05, 0.10, 0.25];

/// Accuracy (percent of samples with `e <= threshold`) at each threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JesorskySummary {
    pub samples: usize,
    pub thresholds: Vec<f64>,
    pub accuracy_percent: Vec<f64>,
}

impl JesorskySummary {
    pub fn from_errors(errors: &[f64]) -> Self {
        let n = errors.len();
        let accuracy_percent = JESORSKY_THRESHOLDS
            .iter()
            .map(|&t| {
                if n == 0 {
                    0.0
                } else {
                    100.0 * errors.iter().filter(|&&e| e <= t).count() as f64 / n as f64
                }
            })
            .collect();
        Self {
            samples: n,
            thresholds: JESORSKY_THRESHOLDS.to_vec(),
            accuracy_percent,
        }
    }
}
