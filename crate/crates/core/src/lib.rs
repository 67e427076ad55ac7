//! Self-supervised gaze-zone representation learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`imaging`]: grayscale rasters and the classical primitives (Otsu, adaptive
//!   thresholding, Canny, connected blobs, circular Hough transform).
//! - [`landmarks`]: 68-point landmark sidecars and the eye/nose anchors derived
//!   from them.
//! - [`pupil`]: the two-stage (blob + Hough) pupil-center localizer and the
//!   Jesorsky localization error.
//! - [`heuristic`]: angle-based gaze-zone / head-pose pseudo-labels and temporal
//!   vote smoothing.
//! - [`nnet`]: a small CPU neural core implementing the capsule CNN backbone,
//!   its losses, SGD, gradient checking, and downstream adaptation.
//! - [`pipeline`]: manifests, splits, the synthetic corpus generator, dataset
//!   annotation, evaluation and reporting.

pub mod geom;
pub mod heuristic;
pub mod imaging;
pub mod landmarks;
pub mod nnet;
pub mod pipeline;
pub mod pupil;

pub use geom::{Point, Rect};
pub use heuristic::{AngleQuad, HeadPoseLabel, PseudoLabel, ZoneLabel};
pub use imaging::{BitMask, Circle, GrayImage, RgbImage};
pub use landmarks::{EyeRegion, FaceSample, LandmarkSet};
pub use nnet::{Network, Tensor};
pub use pupil::{PupilEstimate, PupilPair};
