use super::{BitMask, Circle, ImagingError, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HoughParams {
    pub r_min: u32,
    pub r_max: u32,
    /// A peak at radius `r` needs at least `vote_fraction * 2 pi r` votes.
    pub vote_fraction: f64,
}

impl HoughParams {
    pub fn new(r_min: u32, r_max: u32) -> Self {
        Self {
            r_min,
            r_max,
            vote_fraction: 0.6,
        }
    }

    pub fn min_votes(&self, r: u32) -> f64 {
        self.vote_fraction * std::f64::consts::TAU * r as f64
    }
}

/// Integer offsets whose Euclidean length rounds (half-up) to `r`.
fn ring_offsets(r: u32) -> Vec<(i32, i32)> {
    // round(d) == r  <=>  (2r - 1)^2 <= 4 d^2 < (2r + 1)^2
    let lo = (2 * r as i64 - 1).pow(2);
    let hi = (2 * r as i64 + 1).pow(2);
    let reach = r as i32 + 1;
    let mut out = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d4 = 4 * (dx as i64 * dx as i64 + dy as i64 * dy as i64);
            if d4 >= lo && d4 < hi {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn validate(edges: &BitMask, r_min: u32, r_max: u32) -> Result<()> {
    let half = (edges.width().min(edges.height()) / 2) as u32;
    if r_min < 1 || r_min > r_max || r_max > half {
        return Err(ImagingError::InvalidRadiusRange {
            r_min,
            r_max,
            width: edges.width(),
            height: edges.height(),
        });
    }
    Ok(())
}

/// Vote accumulator over `(r, cy, cx)` at 1 px resolution, laid out as
/// `[(r - r_min) * height * width + cy * width + cx]`.
///
/// Every edge pixel votes once for each in-image center whose distance to the
/// pixel rounds to `r`.
pub fn hough_accumulator(edges: &BitMask, r_min: u32, r_max: u32) -> Result<Vec<u32>> {
    validate(edges, r_min, r_max)?;
    let (w, h) = (edges.width() as i32, edges.height() as i32);
    let plane = (w * h) as usize;
    let mut acc = vec![0u32; plane * (r_max - r_min + 1) as usize];
    let points: Vec<(i32, i32)> = edges.ones().map(|(x, y)| (x as i32, y as i32)).collect();
    for r in r_min..=r_max {
        let base = (r - r_min) as usize * plane;
        for (dx, dy) in ring_offsets(r) {
            for &(x, y) in &points {
                let cx = x - dx;
                let cy = y - dy;
                if cx >= 0 && cy >= 0 && cx < w && cy < h {
                    acc[base + (cy * w + cx) as usize] += 1;
                }
            }
        }
    }
    Ok(acc)
}

/// Circular Hough transform.
///
/// Returns the local maxima (26-neighbourhood in `(r, cy, cx)`) that clear
/// the vote threshold, sorted by score descending, ties by `r`, `cy`, `cx`
/// ascending. Plateaus report their first cell in that order.
pub fn hough_circles(edges: &BitMask, params: &HoughParams) -> Result<Vec<Circle>> {
    let HoughParams { r_min, r_max, .. } = *params;
    validate(edges, r_min, r_max)?;
    if edges.is_empty() {
        return Ok(Vec::new());
    }
    let acc = hough_accumulator(edges, r_min, r_max)?;
    let (w, h) = (edges.width() as isize, edges.height() as isize);
    let depth = (r_max - r_min + 1) as isize;
    let idx = |ri: isize, y: isize, x: isize| (ri * h * w + y * w + x) as usize;

    let mut found = Vec::new();
    for ri in 0..depth {
        let r = r_min + ri as u32;
        let min_votes = params.min_votes(r);
        for y in 0..h {
            for x in 0..w {
                let v = acc[idx(ri, y, x)];
                if v == 0 || (v as f64) < min_votes {
                    continue;
                }
                let mut peak = true;
                'scan: for dr in -1isize..=1 {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            if dr == 0 && dy == 0 && dx == 0 {
                                continue;
                            }
                            let (nr, ny, nx) = (ri + dr, y + dy, x + dx);
                            if nr < 0 || ny < 0 || nx < 0 || nr >= depth || ny >= h || nx >= w {
                                continue;
                            }
                            let nv = acc[idx(nr, ny, nx)];
                            let earlier = (dr, dy, dx) < (0, 0, 0);
                            if nv > v || (nv == v && earlier) {
                                peak = false;
                                break 'scan;
                            }
                        }
                    }
                }
                if peak {
                    found.push(Circle {
                        cx: x as f64,
                        cy: y as f64,
                        r,
                        score: v,
                    });
                }
            }
        }
    }
    found.sort_by(|a, b| {
        b.score
            .cmp(&a.score)
            .then(a.r.cmp(&b.r))
            .then(a.cy.total_cmp(&b.cy))
            .then(a.cx.total_cmp(&b.cx))
    });
    Ok(found)
}
