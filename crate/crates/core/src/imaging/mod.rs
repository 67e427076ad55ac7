//! Grayscale rasters and the classical image-processing primitives used by the
//! pupil localizer.
//!
//! All functions are pure: identical input bytes give identical output bytes.

mod adaptive;
mod blobs;
mod canny;
mod hough;
mod io;
mod otsu;
mod raster;

pub use adaptive::adaptive_threshold;
pub use blobs::{blob_centers, Blob};
pub use canny::{canny, gaussian_blur, CannyParams};
pub use hough::{hough_accumulator, hough_circles, HoughParams};
pub use io::{load_rgb, save_png, save_ppm};
pub use otsu::{between_class_variance_order, otsu_threshold};
pub use raster::{to_gray, BitMask, Circle, GrayImage, RgbImage};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image has zero area ({width}x{height})")]
    EmptyImage { width: usize, height: usize },
    #[error("buffer length {actual} does not match {width}x{height}x{channels}")]
    BufferSize {
        width: usize,
        height: usize,
        channels: usize,
        actual: usize,
    },
    #[error("histogram has fewer than two distinct gray levels")]
    DegenerateHistogram,
    #[error("invalid window {window}: {reason}")]
    InvalidWindow { window: usize, reason: &'static str },
    #[error("invalid Canny thresholds low={low} high={high}")]
    InvalidThresholds { low: f64, high: f64 },
    #[error("invalid radius range [{r_min}, {r_max}] for a {width}x{height} map")]
    InvalidRadiusRange {
        r_min: u32,
        r_max: u32,
        width: usize,
        height: usize,
    },
    #[error("rectangle {0:?} lies outside the image")]
    RectOutOfBounds(crate::Rect),
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ImagingError>;
