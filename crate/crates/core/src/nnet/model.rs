//! The capsule CNN ("Ize-Net") and a generic sequential network container.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm2d, Cache, Conv2d, Dense, Layer, Mode, Param};
use super::tensor::Tensor;
use super::{NnetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapsuleSpec {
    pub count: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IzeNetConfig {
    pub input_size: usize,
    pub in_channels: usize,
    /// Output channels of the five conv blocks.
    pub widths: Vec<usize>,
    pub capsules: CapsuleSpec,
    /// Fully-connected widths after the capsule block; the last one is the
    /// latent dimension.
    pub fc: Vec<usize>,
    pub outputs: usize,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for IzeNetConfig {
    fn default() -> Self {
        Self::full()
    }
}

pub const SUPPORTED_INPUT_SIZES: [usize; 3] = [32, 64, 128];
const CONV_BLOCKS: usize = 5;

impl IzeNetConfig {
    /// Full-size network on 128x128 RGB input.
    pub fn full() -> Self {
        Self {
            input_size: 128,
            in_channels: 3,
            widths: vec![32, 64, 64, 128, 128],
            capsules: CapsuleSpec { count: 32, dim: 8 },
            fc: vec![1024, 512],
            outputs: 3,
            bn_momentum: 0.99,
            seed: 0,
        }
    }

    /// Narrow network on 32x32 input for desk-scale experiments.
    pub fn toy() -> Self {
        Self {
            input_size: 32,
            widths: vec![8, 16, 16, 32, 32],
            capsules: CapsuleSpec { count: 8, dim: 8 },
            ..Self::full()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(NnetError::Config(msg));
        if !SUPPORTED_INPUT_SIZES.contains(&self.input_size) {
            return fail(format!(
                "input size {} not in {SUPPORTED_INPUT_SIZES:?}",
                self.input_size
            ));
        }
        if self.widths.len() != CONV_BLOCKS || self.widths.contains(&0) {
            return fail(format!(
                "need {CONV_BLOCKS} positive conv widths, got {:?}",
                self.widths
            ));
        }
        if self.in_channels == 0 || self.capsules.count == 0 || self.capsules.dim == 0 {
            return fail("channel and capsule sizes must be positive".into());
        }
        if self.fc.is_empty() || self.fc.contains(&0) || self.outputs == 0 {
            return fail(format!("invalid fully-connected widths {:?}", self.fc));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return fail(format!(
                "batch-norm momentum {} outside [0, 1)",
                self.bn_momentum
            ));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        *self.fc.last().expect("validated")
    }

    /// Spatial side length after the conv trunk.
    pub fn trunk_side(&self) -> usize {
        self.input_size >> CONV_BLOCKS
    }
}

/// A sequential network split into a backbone (ending at the latent tap) and
/// a task head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: IzeNetConfig,
    layers: Vec<Layer>,
    backbone_len: usize,
}

/// Per-layer caches from a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<Cache>,
    pub output: Tensor,
    pub latent: Tensor,
}

/// Parameter gradients, indexed `[layer][param]`. Layers that carry no
/// trainable parameters, or that were not reached by the backward pass, hold
/// an empty list.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub per_layer: Vec<Vec<Vec<f64>>>,
}

pub fn build_izenet(config: &IzeNetConfig) -> Result<Network> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut layers = Vec::new();
    let mut channels = config.in_channels;
    for &w in &config.widths {
        layers.push(Layer::Conv2d(Conv2d::new(&mut rng, channels, w, 3)));
        layers.push(Layer::BatchNorm2d(BatchNorm2d::new(w, config.bn_momentum)));
        layers.push(Layer::Relu);
        layers.push(Layer::MaxPool2d);
        channels = w;
    }
    let caps = config.capsules.count * config.capsules.dim;
    layers.push(Layer::Conv2d(Conv2d::new(&mut rng, channels, caps, 3)));
    layers.push(Layer::Squash {
        capsule_dim: config.capsules.dim,
    });
    layers.push(Layer::Flatten);
    let side = config.trunk_side();
    let mut features = caps * side * side;
    for &width in &config.fc {
        layers.push(Layer::Dense(Dense::new(&mut rng, features, width)));
        layers.push(Layer::Relu);
        features = width;
    }
    let backbone_len = layers.len();
    layers.push(Layer::Dense(Dense::new(&mut rng, features, config.outputs)));
    layers.push(Layer::Softmax);
    Ok(Network {
        config: config.clone(),
        layers,
        backbone_len,
    })
}

impl Network {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn backbone_len(&self) -> usize {
        self.backbone_len
    }

    pub fn backbone(&self) -> &[Layer] {
        &self.layers[..self.backbone_len]
    }

    pub fn head(&self) -> &[Layer] {
        &self.layers[self.backbone_len..]
    }

    /// Replaces every layer after the latent tap.
    pub fn replace_head(&mut self, head: Vec<Layer>) {
        self.layers.truncate(self.backbone_len);
        self.layers.extend(head);
    }

    pub fn set_backbone_frozen(&mut self, frozen: bool) {
        for layer in &mut self.layers[..self.backbone_len] {
            layer.set_frozen(frozen);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(Param::len)
            .sum()
    }

    /// True when the head ends in a softmax (classification task).
    pub fn outputs_probabilities(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::Softmax))
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Dense(d) => Some(d.outputs),
                _ => None,
            })
            .unwrap_or(0)
    }

    pub fn input_shape(&self, batch: usize) -> Vec<usize> {
        let s = self.config.input_size;
        vec![batch, self.config.in_channels, s, s]
    }

    fn layer_mode(layer: &Layer, mode: Mode) -> Mode {
        if layer.is_frozen() {
            Mode::Eval
        } else {
            mode
        }
    }

    /// Forward pass keeping the caches needed by [`Network::backward`].
    /// Batch-norm layers with frozen parameters always use running statistics.
    pub fn trace(&self, x: &Tensor, mode: Mode) -> Result<Trace> {
        if x.shape().len() != 4 || x.shape()[1..] != self.input_shape(1)[1..] {
            return Err(NnetError::Shape(format!(
                "expected input {:?}, got {:?}",
                self.input_shape(x.batch()),
                x.shape()
            )));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        let mut latent = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, cache) = layer.forward(&cur, Self::layer_mode(layer, mode))?;
            if !out.all_finite() {
                return Err(NnetError::NumericFault {
                    layer: i,
                    kind: layer.kind(),
                });
            }
            caches.push(cache);
            cur = out;
            if i + 1 == self.backbone_len {
                latent = Some(cur.clone());
            }
        }
        let latent = latent.unwrap_or_else(|| cur.clone());
        Ok(Trace {
            caches,
            output: cur,
            latent,
        })
    }

    /// Eval-mode forward pass returning `(outputs, latents)`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let t = self.trace(x, Mode::Eval)?;
        Ok((t.output, t.latent))
    }

    /// Eval-mode latents only.
    pub fn latents(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for (i, layer) in self.layers[..self.backbone_len].iter().enumerate() {
            cur = layer.forward(&cur, Mode::Eval)?.0;
            if !cur.all_finite() {
                return Err(NnetError::NumericFault {
                    layer: i,
                    kind: layer.kind(),
                });
            }
        }
        Ok(cur)
    }

    /// Folds the batch statistics of a train-mode trace into the running
    /// averages of every non-frozen batch-norm layer.
    pub fn commit_batch_stats(&mut self, trace: &Trace) {
        for (layer, cache) in self.layers.iter_mut().zip(&trace.caches) {
            if let (
                Layer::BatchNorm2d(bn),
                Cache::BatchNorm {
                    train: true,
                    batch_mean,
                    batch_var_unbiased,
                    ..
                },
            ) = (layer, cache)
            {
                bn.update_running(batch_mean, batch_var_unbiased);
            }
        }
    }

    fn first_trainable(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| l.params().iter().any(|p| !p.frozen))
    }

    /// Backpropagates `grad_output` (gradient of the loss with respect to the
    /// network output). Stops at the first layer with trainable parameters.
    pub fn backward(&self, trace: &Trace, grad_output: &Tensor) -> Result<Gradients> {
        if grad_output.shape() != trace.output.shape() {
            return Err(NnetError::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_output.shape(),
                trace.output.shape()
            )));
        }
        let mut per_layer = vec![Vec::new(); self.layers.len()];
        let Some(first) = self.first_trainable() else {
            return Ok(Gradients { per_layer });
        };
        let mut grad = grad_output.clone();
        for i in (first..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let (dx, pg) = layer.backward(&trace.caches[i], &grad, i > first)?;
            if !pg.iter().flatten().all(|v| v.is_finite()) {
                return Err(NnetError::NumericFault {
                    layer: i,
                    kind: layer.kind(),
                });
            }
            per_layer[i] = pg;
            match dx {
                Some(dx) => grad = dx,
                None => break,
            }
        }
        Ok(Gradients { per_layer })
    }

    /// Flat copies of every parameter and buffer of the backbone, for
    /// bit-identity comparisons.
    pub fn backbone_snapshot(&self) -> Vec<Vec<u64>> {
        self.backbone()
            .iter()
            .flat_map(|l| l.blocks())
            .map(|p| p.value.iter().map(|v| v.to_bits()).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> IzeNetConfig {
        IzeNetConfig {
            widths: vec![4, 4, 4, 8, 8],
            capsules: CapsuleSpec { count: 4, dim: 4 },
            fc: vec![32, 16],
            ..IzeNetConfig::toy()
        }
    }

    #[test]
    fn full_size_forward_yields_three_probabilities() {
        let net = build_izenet(&IzeNetConfig::full()).unwrap();
        let x = Tensor::new(
            net.input_shape(1),
            (0..3 * 128 * 128)
                .map(|i| (i % 255) as f64 / 255.0)
                .collect(),
        )
        .unwrap();
        let (p, z) = net.forward(&x).unwrap();
        assert_eq!(p.shape(), &[1, 3]);
        assert_eq!(z.shape(), &[1, 512]);
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn toy_forward_is_normalized_and_rowwise() {
        let net = build_izenet(&IzeNetConfig::toy()).unwrap();
        let item: Vec<f64> = (0..3 * 32 * 32)
            .map(|i| ((i * 7919) % 101) as f64 / 100.0)
            .collect();
        let x = Tensor::stack(&[&item, &item, &item], &[3, 32, 32]).unwrap();
        let (p, _) = net.forward(&x).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|v| *v > 0.0 && *v < 1.0));
            assert_eq!(row, &p.data()[..3]);
        }
    }

    #[test]
    fn zero_image_gives_uniform_output() {
        let net = build_izenet(&tiny()).unwrap();
        let (p, _) = net.forward(&Tensor::zeros(net.input_shape(2))).unwrap();
        for v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_izenet(&IzeNetConfig::toy().with_seed(5)).unwrap();
        let b = build_izenet(&IzeNetConfig::toy().with_seed(5)).unwrap();
        let c = build_izenet(&IzeNetConfig::toy().with_seed(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(build_izenet(&IzeNetConfig {
            input_size: 48,
            ..tiny()
        })
        .is_err());
        assert!(build_izenet(&IzeNetConfig {
            widths: vec![4, 4, 4, 8],
            ..tiny()
        })
        .is_err());
        assert!(build_izenet(&IzeNetConfig {
            fc: vec![],
            ..tiny()
        })
        .is_err());
    }

    #[test]
    fn nan_input_reports_layer() {
        let net = build_izenet(&tiny()).unwrap();
        let mut x = Tensor::zeros(net.input_shape(1));
        x.data_mut()[0] = f64::NAN;
        assert!(matches!(
            net.forward(&x),
            Err(NnetError::NumericFault { layer: 0, .. })
        ));
    }

    #[test]
    fn frozen_backbone_yields_no_backbone_gradients() {
        let mut net = build_izenet(&tiny()).unwrap();
        net.set_backbone_frozen(true);
        let x = Tensor::new(
            net.input_shape(2),
            (0..2 * 3 * 32 * 32).map(|i| (i as f64).sin()).collect(),
        )
        .unwrap();
        let t = net.trace(&x, Mode::Train).unwrap();
        let g = net
            .backward(
                &t,
                &Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.1, 0.0, 0.3, -0.3]).unwrap(),
            )
            .unwrap();
        assert!(g.per_layer[..net.backbone_len()]
            .iter()
            .all(|v| v.is_empty()));
        assert!(!g.per_layer[net.backbone_len()].is_empty());
    }
}
