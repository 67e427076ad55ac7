use crate::{Point, Rect};

use super::BitMask;

/// An 8-connected component of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub centroid: Point,
    pub area: usize,
    pub bbox: Rect,
    /// Row-major index of the component's first pixel.
    pub first_pixel: (usize, usize),
}

/// 8-connected components, sorted by area descending, then by the row-major
/// position of their first pixel. Centroids are mean pixel coordinates.
pub fn blob_centers(mask: &BitMask) -> Vec<Blob> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut blobs = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut sx, mut sy, mut area) = (0u64, 0u64, 0usize);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            sx += x as u64;
            sy += y as u64;
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && mask.bits()[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        blobs.push(Blob {
            centroid: Point::new(sx as f64 / area as f64, sy as f64 / area as f64),
            area,
            bbox: Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
            first_pixel: (start % w, start / w),
        });
    }
    // Discovery order is already row-major, so a stable sort keeps it for ties.
    blobs.sort_by_key(|b| std::cmp::Reverse(b.area));
    blobs
}
