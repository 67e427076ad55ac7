use super::{BitMask, GrayImage, ImagingError, Result};

/// Local-mean thresholding.
///
/// A pixel is set iff its value is strictly below the mean of the
/// `window x window` neighbourhood centred on it minus `offset_c`. Windows
/// that overhang the border read edge-replicated pixels, so every mean is over
/// exactly `window^2` samples.
pub fn adaptive_threshold(img: &GrayImage, window: usize, offset_c: f64) -> Result<BitMask> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(ImagingError::InvalidWindow {
            window,
            reason: "window must be odd and at least 3",
        });
    }
    if window > img.width().min(img.height()) {
        return Err(ImagingError::InvalidWindow {
            window,
            reason: "window exceeds the smaller image dimension",
        });
    }
    let (w, h) = (img.width(), img.height());
    let half = (window / 2) as isize;

    // Horizontal box sums with clamped reads, then vertical sums of those.
    let mut row_sums = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0u32;
            for dx in -half..=half {
                acc += img.get_clamped(x as isize + dx, y as isize) as u32;
            }
            row_sums[y * w + x] = acc;
        }
    }
    let n = (window * window) as f64;
    let mut mask = BitMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0u32;
            for dy in -half..=half {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                acc += row_sums[yy * w + x];
            }
            // v < sum / n - c  <=>  v * n < sum - c * n
            let v = img.get(x, y) as f64;
            if v * n < acc as f64 - offset_c * n {
                mask.set(x, y, true);
            }
        }
    }
    Ok(mask)
}
