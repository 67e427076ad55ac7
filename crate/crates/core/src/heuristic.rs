//! Angle-based gaze-zone and head-pose pseudo-labels, and temporal vote
//! smoothing of label streams.
//!
//! Angles are measured between a segment ending at the nose tip and the
//! image vertical. `theta1`/`theta2` use the image-left/right pupil centers,
//! `theta3`/`theta4` the image-left/right eye corners.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::landmarks::{
    nose_anchor, CornerMode, FaceSample, LandmarkError, LEFT_EYE_INNER, LEFT_EYE_OUTER,
    RIGHT_EYE_INNER, RIGHT_EYE_OUTER,
};
use crate::pupil::{locate_pupils, Provenance, PupilConfig, PupilError, PupilPair};
use crate::Point;

#[derive(Debug, Error)]
pub enum HeuristicError {
    #[error("segment endpoints coincide at ({x}, {y})")]
    DegenerateSegment { x: f64, y: f64 },
    #[error("smoothing window must be odd and positive, got {0}")]
    InvalidWindow(usize),
    #[error(transparent)]
    Pupil(#[from] PupilError),
    #[error(transparent)]
    Landmarks(#[from] LandmarkError),
}

pub type Result<T> = std::result::Result<T, HeuristicError>;

macro_rules! three_way_label {
    ($name:ident) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            Left,
            Right,
            Center,
        }

        impl $name {
            pub const ALL: [$name; 3] = [$name::Left, $name::Right, $name::Center];

            /// Class index used by the classifier head.
            pub fn index(self) -> usize {
                match self {
                    $name::Left => 0,
                    $name::Right => 1,
                    $name::Center => 2,
                }
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }

            pub fn as_str(self) -> &'static str {
                match self {
                    $name::Left => "left",
                    $name::Right => "right",
                    $name::Center => "center",
                }
            }

            /// Label of the horizontally mirrored sample.
            pub fn mirrored(self) -> Self {
                match self {
                    $name::Left => $name::Right,
                    $name::Right => $name::Left,
                    $name::Center => $name::Center,
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.trim().to_ascii_lowercase().as_str() {
                    "left" | "l" => Ok($name::Left),
                    "right" | "r" => Ok($name::Right),
                    "center" | "centre" | "c" => Ok($name::Center),
                    other => Err(format!("unknown label {other:?}")),
                }
            }
        }
    };
}

three_way_label!(ZoneLabel);
three_way_label!(HeadPoseLabel);

/// The four heuristic angles, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AngleQuad {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub theta4: f64,
}

/// Unsigned angle between segment `a`-`b` and the image vertical, in `[0, 90]`.
pub fn angle_from_vertical(a: Point, b: Point) -> Result<f64> {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    if dx == 0.0 && dy == 0.0 {
        return Err(HeuristicError::DegenerateSegment { x: a.x, y: a.y });
    }
    Ok(dx.abs().atan2(dy.abs()).to_degrees())
}

/// Left when `theta1` exceeds `theta2` by more than `tau`, right in the
/// mirrored case, center otherwise.
pub fn classify_gaze(quad: &AngleQuad, tau: f64) -> ZoneLabel {
    let diff = quad.theta1 - quad.theta2;
    if diff > tau {
        ZoneLabel::Left
    } else if -diff > tau {
        ZoneLabel::Right
    } else {
        ZoneLabel::Center
    }
}

/// Left when `theta4` exceeds `theta3` by more than `tau`.
pub fn classify_headpose(quad: &AngleQuad, tau: f64) -> HeadPoseLabel {
    let diff = quad.theta4 - quad.theta3;
    if diff > tau {
        HeadPoseLabel::Left
    } else if -diff > tau {
        HeadPoseLabel::Right
    } else {
        HeadPoseLabel::Center
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    /// Center dead-band for the gaze rule, degrees.
    pub tau: f64,
    /// Center dead-band for the head-pose rule, degrees.
    pub headpose_tau: f64,
    pub corner_mode: CornerMode,
    /// Samples whose eye-corner roll exceeds this (degrees) are flagged.
    pub roll_limit: f64,
    pub smoothing_window: usize,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            headpose_tau: 2.0,
            corner_mode: CornerMode::Outer,
            roll_limit: 10.0,
            smoothing_window: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelFlags {
    pub roll_out_of_range: bool,
    pub clamped_landmarks: bool,
    pub left_primary_only: bool,
    pub right_primary_only: bool,
}

impl LabelFlags {
    pub fn is_clear(&self) -> bool {
        *self == LabelFlags::default()
    }
}

impl fmt::Display for LabelFlags {
    /// `;`-joined flag names, empty when nothing is set.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = [
            (self.roll_out_of_range, "roll_out_of_range"),
            (self.clamped_landmarks, "clamped_landmarks"),
            (self.left_primary_only, "left_primary_only"),
            (self.right_primary_only, "right_primary_only"),
        ];
        let set: Vec<&str> = names.iter().filter(|(b, _)| *b).map(|(_, n)| *n).collect();
        f.write_str(&set.join(";"))
    }
}

/// Full evidence behind one sample's pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub zone: ZoneLabel,
    pub head_pose: HeadPoseLabel,
    pub angles: AngleQuad,
    pub pupils: PupilPair,
    pub roll_degrees: f64,
    pub flags: LabelFlags,
}

/// Roll of the line through the outer eye corners, degrees from horizontal.
pub fn eye_line_roll(sample: &FaceSample) -> f64 {
    let a = sample.landmarks.get(LEFT_EYE_OUTER);
    let b = sample.landmarks.get(RIGHT_EYE_OUTER);
    (b.y - a.y).atan2(b.x - a.x).to_degrees()
}

/// Angles from already-localized pupils and the sample's landmarks.
pub fn angle_quad(sample: &FaceSample, pupils: &PupilPair, mode: CornerMode) -> Result<AngleQuad> {
    let (nose, _) = nose_anchor(sample);
    let (left_corner, right_corner) = match mode {
        CornerMode::Outer => (LEFT_EYE_OUTER, RIGHT_EYE_OUTER),
        CornerMode::Inner => (LEFT_EYE_INNER, RIGHT_EYE_INNER),
    };
    Ok(AngleQuad {
        theta1: angle_from_vertical(pupils.left.center, nose)?,
        theta2: angle_from_vertical(pupils.right.center, nose)?,
        theta3: angle_from_vertical(sample.landmarks.get(left_corner), nose)?,
        theta4: angle_from_vertical(sample.landmarks.get(right_corner), nose)?,
    })
}

/// Pseudo-labels one face: localize pupils, measure the four angles, classify
/// gaze zone and head pose.
pub fn pseudo_label(
    sample: &FaceSample,
    pupil_cfg: &PupilConfig,
    cfg: &HeuristicConfig,
) -> Result<PseudoLabel> {
    let pupils = locate_pupils(sample, pupil_cfg)?;
    let angles = angle_quad(sample, &pupils, cfg.corner_mode)?;
    let roll = eye_line_roll(sample);
    let flags = LabelFlags {
        roll_out_of_range: roll.abs() > cfg.roll_limit,
        clamped_landmarks: sample.landmarks.any_clamped(),
        left_primary_only: pupils.left.provenance == Provenance::PrimaryOnly,
        right_primary_only: pupils.right.provenance == Provenance::PrimaryOnly,
    };
    Ok(PseudoLabel {
        zone: classify_gaze(&angles, cfg.tau),
        head_pose: classify_headpose(&angles, cfg.headpose_tau),
        angles,
        pupils,
        roll_degrees: roll,
        flags,
    })
}

/// Temporal max-vote smoothing.
///
/// Each output is the unique mode of the `window` labels centred on the frame
/// (truncated at the stream ends). When the maximum count is shared, the
/// frame keeps its own label.
pub fn smooth_labels<T: Copy + Eq + Hash>(stream: &[T], window: usize) -> Result<Vec<T>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(HeuristicError::InvalidWindow(window));
    }
    let n = stream.len();
    let half = window / 2;
    let mut counts: HashMap<T, usize> = HashMap::new();
    // Window for frame 0 is [0, half].
    for &l in &stream[..n.min(half + 1)] {
        *counts.entry(l).or_default() += 1;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            if i + half < n {
                *counts.entry(stream[i + half]).or_default() += 1;
            }
            if i > half {
                let leaving = stream[i - half - 1];
                *counts.get_mut(&leaving).expect("label in window") -= 1;
            }
        }
        let best = counts.values().copied().max().unwrap_or(0);
        let mut winners = counts.iter().filter(|(_, &c)| c == best);
        let first = winners.next().map(|(l, _)| *l);
        let label = match (first, winners.next()) {
            (Some(l), None) => l,
            _ => stream[i],
        };
        out.push(label);
    }
    Ok(out)
}
