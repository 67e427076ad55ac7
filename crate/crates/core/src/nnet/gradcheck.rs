//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Layer, Mode};
use super::loss::{cosine_gaze_batch, cross_entropy, GazeVector};
use super::model::Network;
use super::tensor::Tensor;
use super::Result;

pub const STEP: f64 = 1e-5;
const SAMPLE_FRACTION: f64 = 0.01;
const MIN_PER_BLOCK: usize = 3;
const ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            checked: 0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_error = self.max_rel_error.max(relative_error(analytic, numeric));
        self.checked += 1;
    }
}

fn subset<R: Rng>(rng: &mut R, len: usize) -> Vec<usize> {
    let n = ((len as f64 * SAMPLE_FRACTION).ceil() as usize)
        .max(MIN_PER_BLOCK)
        .min(len);
    let mut idx = sample(rng, len, n).into_vec();
    idx.sort_unstable();
    idx
}

/// Checks one layer against the loss `sum(r * layer(x))` for a random fixed
/// `r`, covering a sample of every parameter block and of the input.
pub fn grad_check_layer(
    layer: &Layer,
    input: &Tensor,
    mode: Mode,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out, cache) = layer.forward(input, mode)?;
    let weights: Vec<f64> = (0..out.len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let loss = |l: &Layer, x: &Tensor| -> Result<f64> {
        let (y, _) = l.forward(x, mode)?;
        Ok(y.data().iter().zip(&weights).map(|(a, b)| a * b).sum())
    };
    let upstream = Tensor::new(out.shape().to_vec(), weights.clone())?;
    let (dx, dparams) = layer.backward(&cache, &upstream, true)?;
    let mut report = GradCheckReport::new();

    for (pi, grad) in dparams.iter().enumerate() {
        for j in subset(&mut rng, grad.len()) {
            let mut plus = layer.clone();
            plus.params_mut()[pi].value[j] += STEP;
            let mut minus = layer.clone();
            minus.params_mut()[pi].value[j] -= STEP;
            let numeric = (loss(&plus, input)? - loss(&minus, input)?) / (2.0 * STEP);
            report.record(grad[j], numeric);
        }
    }
    if let Some(dx) = dx {
        for j in subset(&mut rng, input.len()) {
            let mut plus = input.clone();
            plus.data_mut()[j] += STEP;
            let mut minus = input.clone();
            minus.data_mut()[j] -= STEP;
            let numeric = (loss(layer, &plus)? - loss(layer, &minus)?) / (2.0 * STEP);
            report.record(dx.data()[j], numeric);
        }
    }
    Ok(report)
}

/// Loss used when checking a whole network.
#[derive(Debug, Clone)]
pub enum NetLoss {
    CrossEntropy(Vec<usize>),
    Gaze(Vec<GazeVector>),
}

impl NetLoss {
    fn eval(&self, output: &Tensor) -> Result<(f64, Tensor)> {
        match self {
            NetLoss::CrossEntropy(t) => cross_entropy(output, t),
            NetLoss::Gaze(t) => cosine_gaze_batch(output, t),
        }
    }
}

/// Checks the composed network in eval mode on a sample of every trainable
/// parameter block.
pub fn grad_check_network(
    net: &Network,
    batch: &Tensor,
    loss: &NetLoss,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trace = net.trace(batch, Mode::Eval)?;
    let (_, dout) = loss.eval(&trace.output)?;
    let grads = net.backward(&trace, &dout)?;
    let value =
        |n: &Network| -> Result<f64> { Ok(loss.eval(&n.trace(batch, Mode::Eval)?.output)?.0) };
    let mut report = GradCheckReport::new();
    for (li, layer_grads) in grads.per_layer.iter().enumerate() {
        for (pi, grad) in layer_grads.iter().enumerate() {
            for j in subset(&mut rng, grad.len()) {
                let mut plus = net.clone();
                plus.layers_mut()[li].params_mut()[pi].value[j] += STEP;
                let mut minus = net.clone();
                minus.layers_mut()[li].params_mut()[pi].value[j] -= STEP;
                let numeric = (value(&plus)? - value(&minus)?) / (2.0 * STEP);
                report.record(grad[j], numeric);
            }
        }
    }
    Ok(report)
}
