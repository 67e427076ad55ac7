use std::cmp::Ordering;

use num_bigint::BigUint;

use super::{GrayImage, ImagingError, Result};

/// Otsu's global threshold level.
///
/// Returns the level `t` maximizing the between-class variance of the split
/// `{v <= t}` / `{v > t}` over the 256-bin histogram. The first maximizing
/// level wins ties. Which side is "foreground" is up to the caller.
pub fn otsu_threshold(img: &GrayImage) -> Result<u8> {
    otsu_from_histogram(&img.histogram())
}

pub(crate) fn otsu_from_histogram(hist: &[u64; 256]) -> Result<u8> {
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(ImagingError::DegenerateHistogram);
    }
    let total: u64 = hist.iter().sum();
    let total_sum: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();

    let mut n0 = 0u64;
    let mut s0 = 0u64;
    let mut best: Option<(u8, u64, u64, u64)> = None;
    for (t, &count) in hist.iter().enumerate().take(255) {
        n0 += count;
        s0 += t as u64 * count;
        let n1 = total - n0;
        if n0 == 0 {
            continue;
        }
        if n1 == 0 {
            break;
        }
        best = match best {
            None => Some((t as u8, n0, s0, n1)),
            Some(cur) => {
                let cand = (t as u8, n0, s0, n1);
                if between_class_variance_order((cand.1, cand.2), (cur.1, cur.2), total, total_sum)
                    == Ordering::Greater
                {
                    Some(cand)
                } else {
                    Some(cur)
                }
            }
        };
    }
    best.map(|b| b.0).ok_or(ImagingError::DegenerateHistogram)
}

/// Exact comparison of the between-class variance of two splits, each given
/// as the (count, intensity sum) of its lower class.
///
/// Up to the positive factor `1 / total^2`, the variance of a split equals
/// `(total * s0 - n0 * total_sum)^2 / (n0 * n1)`; the two ratios are
/// cross-multiplied in arbitrary precision so ties are detected exactly.
pub fn between_class_variance_order(
    a: (u64, u64),
    b: (u64, u64),
    total: u64,
    total_sum: u64,
) -> Ordering {
    let key = |(n0, s0): (u64, u64)| {
        let lhs = total as i128 * s0 as i128;
        let rhs = n0 as i128 * total_sum as i128;
        let num = BigUint::from((lhs - rhs).unsigned_abs());
        let den = BigUint::from(n0) * BigUint::from(total - n0);
        (&num * &num, den)
    };
    let (na, da) = key(a);
    let (nb, db) = key(b);
    (na * db).cmp(&(nb * da))
}
