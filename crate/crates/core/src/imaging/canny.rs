use std::collections::VecDeque;

use super::{BitMask, GrayImage, ImagingError, Result};

/// Canny parameters. Gradient units are Sobel magnitudes on the smoothed
/// 0-255 image.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CannyParams {
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            low: 50.0,
            high: 150.0,
        }
    }
}

const SIGMA: f64 = 1.0;
const RADIUS: isize = 2;

fn gaussian_kernel() -> [f64; 5] {
    let mut k = [0.0; 5];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable 5x5 Gaussian (sigma 1) with edge replication.
pub fn gaussian_blur(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let k = gaussian_kernel();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * img.get_clamped(x as isize + i as isize - RADIUS, y as isize) as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = (y as isize + i as isize - RADIUS).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Canny edge detector: Gaussian smoothing, Sobel gradients, non-maximum
/// suppression along the quantized gradient direction, and double-threshold
/// hysteresis with 8-connectivity.
pub fn canny(img: &GrayImage, low: f64, high: f64) -> Result<BitMask> {
    if !(0.0 <= low && low <= high) {
        return Err(ImagingError::InvalidThresholds { low, high });
    }
    let (w, h) = (img.width(), img.height());
    let smooth = gaussian_blur(img);
    let at = |x: isize, y: isize| -> f64 {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, h as isize - 1) as usize;
        smooth[cy * w + cx]
    };

    let mut mag = vec![0.0; w * h];
    let mut dir = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            mag[i] = gx.hypot(gy);
            dir[i] = quantize_direction(gx, gy);
        }
    }

    // Non-maximum suppression; out-of-image neighbours count as zero.
    let m = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let v = mag[i];
            if v <= 0.0 {
                continue;
            }
            let (dx, dy) = match dir[i] {
                0 => (1, 0),
                1 => (1, 1),
                2 => (0, 1),
                _ => (-1, 1),
            };
            if v >= m(x + dx, y + dy) && v >= m(x - dx, y - dy) {
                thin[i] = v;
            }
        }
    }

    // Hysteresis.
    let mut edges = BitMask::new(w, h);
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if thin[y * w + x] >= high && thin[y * w + x] > 0.0 {
                edges.set(x, y, true);
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                let v = thin[ny * w + nx];
                if !edges.get(nx, ny) && v >= low && v > 0.0 {
                    edges.set(nx, ny, true);
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    Ok(edges)
}

/// 0: horizontal gradient, 1: along the main diagonal (y down), 2: vertical,
/// 3: anti-diagonal.
fn quantize_direction(gx: f64, gy: f64) -> u8 {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        0
    } else if angle < 67.5 {
        1
    } else if angle < 112.5 {
        2
    } else {
        3
    }
}
