//! Cosine-similarity k-nearest-neighbour probe on latent vectors.

use super::{NnetError, Result};

pub const DEFAULT_K: usize = 14;
/// Softmax temperature applied to similarities when weighting votes.
pub const VOTE_TEMPERATURE: f64 = 0.07;

/// L2-normalized training latents with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    latents: Vec<Vec<f64>>,
    labels: Vec<usize>,
    classes: usize,
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

impl KnnIndex {
    pub fn new(latents: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<Self> {
        if latents.is_empty() {
            return Err(NnetError::Config(
                "k-NN needs a non-empty training set".into(),
            ));
        }
        if latents.len() != labels.len() {
            return Err(NnetError::Config("latent and label counts differ".into()));
        }
        let dim = latents[0].len();
        if latents.iter().any(|l| l.len() != dim) || labels.iter().any(|&l| l >= classes) {
            return Err(NnetError::Config(
                "inconsistent latent dimensions or labels".into(),
            ));
        }
        Ok(Self {
            latents: latents.iter().map(|l| normalized(l)).collect(),
            labels: labels.to_vec(),
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    /// Similarity-weighted vote among the `k` most similar training latents.
    /// Weights are `exp(sim / 0.07)`; ties go to the larger summed
    /// similarity, then the smaller label.
    pub fn classify(&self, query: &[f64], k: usize) -> Result<usize> {
        if k == 0 || k > self.len() {
            return Err(NnetError::Config(format!(
                "k = {k} but {} training latents",
                self.len()
            )));
        }
        if query.len() != self.latents[0].len() {
            return Err(NnetError::Shape(
                "query dimension differs from training latents".into(),
            ));
        }
        let q = normalized(query);
        let mut sims: Vec<(f64, usize)> = self
            .latents
            .iter()
            .enumerate()
            .map(|(i, l)| (l.iter().zip(&q).map(|(a, b)| a * b).sum(), i))
            .collect();
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut weight = vec![0.0; self.classes];
        let mut total_sim = vec![0.0; self.classes];
        for &(s, i) in &sims[..k] {
            weight[self.labels[i]] += (s / VOTE_TEMPERATURE).exp();
            total_sim[self.labels[i]] += s;
        }
        let mut best = 0;
        for c in 1..self.classes {
            let key = (weight[c], total_sim[c]);
            let incumbent = (weight[best], total_sim[best]);
            if key.0 > incumbent.0 || (key.0 == incumbent.0 && key.1 > incumbent.1) {
                best = c;
            }
        }
        Ok(best)
    }
}

/// One-shot form of [`KnnIndex::classify`].
pub fn knn_probe(
    latents: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    query: &[f64],
    k: usize,
) -> Result<usize> {
    KnnIndex::new(latents, labels, classes)?.classify(query, k)
}
