//! In-memory datasets, batching and augmentation.

use rand::Rng;

use super::loss::GazeVector;
use super::tensor::Tensor;
use super::{NnetError, Result};
use crate::geom::Rect;
use crate::imaging::RgbImage;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, classes: usize },
    Gaze(Vec<GazeVector>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Gaze(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
            Targets::Gaze(g) => Targets::Gaze(indices.iter().map(|&i| g[i]).collect()),
        }
    }
}

/// Random resize-and-crop plus horizontal flip.
#[derive(Debug, Clone, PartialEq)]
pub struct Augment {
    /// Images are upscaled by a factor drawn from `[1, max_scale]` and
    /// cropped back to size at a random offset.
    pub max_scale: f64,
    pub flip_probability: f64,
    /// Class relabeling applied on a horizontal flip (`map[old] = new`).
    pub flip_class_map: Vec<usize>,
}

impl Default for Augment {
    fn default() -> Self {
        Self {
            max_scale: 1.15,
            flip_probability: 0.5,
            flip_class_map: vec![1, 0, 2],
        }
    }
}

/// Square RGB images at a fixed size with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<RgbImage>,
    targets: Targets,
    size: usize,
}

/// Scales 8-bit RGB into a `[3, h, w]` planar vector in `[0, 1]`.
pub fn image_to_planes(img: &RgbImage) -> Vec<f64> {
    let hw = img.width() * img.height();
    let mut out = vec![0.0; 3 * hw];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * hw + i] = px[c] as f64 / 255.0;
        }
    }
    out
}

impl Dataset {
    /// Resizes every image to `size` x `size`.
    pub fn new(images: &[RgbImage], targets: Targets, size: usize) -> Result<Self> {
        if images.len() != targets.len() {
            return Err(NnetError::Config(format!(
                "{} images but {} targets",
                images.len(),
                targets.len()
            )));
        }
        if let Targets::Classes { labels, classes } = &targets {
            if let Some(bad) = labels.iter().find(|&&l| l >= *classes) {
                return Err(NnetError::Config(format!("label {bad} out of range")));
            }
        }
        let images = images
            .iter()
            .map(|img| img.resized(size, size))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| NnetError::Config(e.to_string()))?;
        Ok(Self {
            images,
            targets,
            size,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn images(&self) -> &[RgbImage] {
        &self.images
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            targets: self.targets.select(indices),
            size: self.size,
        }
    }

    /// Stacks the selected samples into `[n, 3, size, size]`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Targets)> {
        let planes: Vec<Vec<f64>> = indices
            .iter()
            .map(|&i| image_to_planes(&self.images[i]))
            .collect();
        let refs: Vec<&[f64]> = planes.iter().map(Vec::as_slice).collect();
        Ok((
            Tensor::stack(&refs, &[3, self.size, self.size])?,
            self.targets.select(indices),
        ))
    }

    /// Like [`Dataset::batch`] with augmentation drawn from `rng`.
    pub fn augmented_batch<R: Rng>(
        &self,
        indices: &[usize],
        aug: &Augment,
        rng: &mut R,
    ) -> Result<(Tensor, Targets)> {
        let mut images = Vec::with_capacity(indices.len());
        let mut targets = self.targets.select(indices);
        for (k, &i) in indices.iter().enumerate() {
            let scale = rng.random_range(1.0..=aug.max_scale.max(1.0));
            let flip = rng.random_bool(aug.flip_probability.clamp(0.0, 1.0));
            let (img, _) = augment_image(&self.images[i], scale, rng)?;
            if flip {
                images.push(img.mirrored());
                match &mut targets {
                    Targets::Classes { labels, .. } => {
                        labels[k] = aug
                            .flip_class_map
                            .get(labels[k])
                            .copied()
                            .unwrap_or(labels[k]);
                    }
                    Targets::Gaze(g) => g[k] = g[k].flipped(),
                }
            } else {
                images.push(img);
            }
        }
        let planes: Vec<Vec<f64>> = images.iter().map(image_to_planes).collect();
        let refs: Vec<&[f64]> = planes.iter().map(Vec::as_slice).collect();
        Ok((Tensor::stack(&refs, &[3, self.size, self.size])?, targets))
    }
}

/// Upscales by `scale` and crops back to the original size at a random
/// offset. Returns the crop and its offset.
fn augment_image<R: Rng>(
    img: &RgbImage,
    scale: f64,
    rng: &mut R,
) -> Result<(RgbImage, (usize, usize))> {
    let (w, h) = (img.width(), img.height());
    let (sw, sh) = (
        (w as f64 * scale).round() as usize,
        (h as f64 * scale).round() as usize,
    );
    let big = img
        .resized(sw.max(w), sh.max(h))
        .map_err(|e| NnetError::Config(e.to_string()))?;
    let ox = rng.random_range(0..=big.width() - w);
    let oy = rng.random_range(0..=big.height() - h);
    let crop = big
        .crop(Rect::new(ox, oy, w, h))
        .map_err(|e| NnetError::Config(e.to_string()))?;
    Ok((crop, (ox, oy)))
}
