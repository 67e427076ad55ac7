//! Losses and metrics.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::{NnetError, Result};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Mean cross-entropy of `probs` (`[batch, classes]`) against class indices,
/// with the gradient with respect to `probs`.
pub fn cross_entropy(probs: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    if probs.shape().len() != 2 || probs.batch() != targets.len() || targets.is_empty() {
        return Err(NnetError::Contract(format!(
            "cross entropy needs [batch, classes] with {} rows, got {:?}",
            targets.len(),
            probs.shape()
        )));
    }
    let k = probs.shape()[1];
    let b = targets.len() as f64;
    let mut grad = Tensor::zeros(probs.shape().to_vec());
    let mut total = 0.0;
    for (i, (row, &t)) in probs.data().chunks(k).zip(targets).enumerate() {
        let sum: f64 = row.iter().sum();
        if row
            .iter()
            .any(|p| !(0.0..=1.0 + ROW_SUM_TOLERANCE).contains(p))
            || (sum - 1.0).abs() > ROW_SUM_TOLERANCE
        {
            return Err(NnetError::Contract(format!(
                "row {i} is not a probability distribution"
            )));
        }
        if t >= k {
            return Err(NnetError::Contract(format!(
                "target {t} out of range for {k} classes"
            )));
        }
        let p = row[t];
        total -= p.max(PROB_FLOOR).ln();
        if p >= PROB_FLOOR {
            grad.data_mut()[i * k + t] = -1.0 / (b * p);
        }
    }
    Ok((total / b, grad))
}

/// A 3D gaze direction; `x` is horizontal in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl GazeVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// The label of a horizontally flipped image.
    pub fn flipped(self) -> Self {
        Self::new(-self.x, self.y, self.z)
    }

    fn cosine(self, other: Self) -> Result<f64> {
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
            return Err(NnetError::DegenerateGaze);
        }
        Ok((self.dot(other) / (na * nb)).clamp(-1.0, 1.0))
    }
}

/// `1 - cos(truth, predicted)`.
pub fn cosine_gaze_loss(truth: GazeVector, predicted: GazeVector) -> Result<f64> {
    Ok(1.0 - truth.cosine(predicted)?)
}

/// Angle between the two directions in degrees (the arccosine of their
/// cosine, evaluated via `atan2` for accuracy near 0 and 180).
pub fn angular_error_deg(truth: GazeVector, predicted: GazeVector) -> Result<f64> {
    truth.cosine(predicted)?;
    let (a, b) = (truth, predicted);
    let cross = GazeVector::new(
        a.y * b.z - a.z * b.y,
        a.z * b.x - a.x * b.z,
        a.x * b.y - a.y * b.x,
    );
    Ok(cross.norm().atan2(a.dot(b)).to_degrees())
}

/// Mean cosine loss over a `[batch, 3]` prediction, with its gradient.
pub(crate) fn cosine_gaze_batch(pred: &Tensor, targets: &[GazeVector]) -> Result<(f64, Tensor)> {
    if pred.shape() != [targets.len(), 3] || targets.is_empty() {
        return Err(NnetError::Contract(format!(
            "gaze loss needs [{}, 3], got {:?}",
            targets.len(),
            pred.shape()
        )));
    }
    let b = targets.len() as f64;
    let mut grad = Tensor::zeros(pred.shape().to_vec());
    let mut total = 0.0;
    for (i, (row, &truth)) in pred.data().chunks(3).zip(targets).enumerate() {
        let p = GazeVector::from_slice(row);
        let (nt, np) = (truth.norm(), p.norm());
        if nt == 0.0 || np == 0.0 {
            return Err(NnetError::DegenerateGaze);
        }
        let cos = truth.dot(p) / (nt * np);
        total += 1.0 - cos;
        // d(1 - cos)/dp = -(t/|t| - cos * p/|p|) / |p|
        let t = truth.to_array();
        for j in 0..3 {
            grad.data_mut()[i * 3 + j] = -(t[j] / nt - cos * row[j] / np) / (np * b);
        }
    }
    Ok((total / b, grad))
}
