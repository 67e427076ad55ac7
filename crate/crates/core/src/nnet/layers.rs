//! Layer types with explicit forward/backward passes.
//!
//! Activations are `[batch, channels, height, width]` for the convolutional
//! trunk and `[batch, features]` after flattening.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use super::{NnetError, Result};

static DATA_PARALLEL: AtomicBool = AtomicBool::new(false);

/// Enables per-sample parallelism in the convolution layers. Per-sample
/// gradient contributions are always reduced in sample order, so results are
/// bit-identical with or without it.
pub fn set_data_parallel(on: bool) {
    DATA_PARALLEL.store(on, Ordering::Relaxed);
}

fn data_parallel() -> bool {
    DATA_PARALLEL.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named parameter or buffer block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub value: Vec<f64>,
    pub frozen: bool,
}

impl Param {
    fn zeros(name: &str, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.to_string(),
            shape,
            value: vec![0.0; n],
            frozen: false,
        }
    }

    fn filled(name: &str, shape: Vec<usize>, v: f64) -> Self {
        let mut p = Self::zeros(name, shape);
        p.value.fill(v);
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Glorot (Xavier) normal, truncated at two standard deviations.
pub(crate) fn glorot_normal<R: Rng>(
    rng: &mut R,
    fan_in: usize,
    fan_out: usize,
    n: usize,
) -> Vec<f64> {
    // 0.8796... is the std of a standard normal truncated to [-2, 2].
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt() / 0.879_625_661_034_239_8;
    (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new<R: Rng>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Self {
        let kk = kernel * kernel;
        let mut weight = Param::zeros(
            "conv.weight",
            vec![out_channels, in_channels, kernel, kernel],
        );
        weight.value = glorot_normal(rng, in_channels * kk, out_channels * kk, weight.len());
        Self {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias: Param::zeros("conv.bias", vec![out_channels]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
}

impl BatchNorm2d {
    pub fn new(channels: usize, momentum: f64) -> Self {
        let mut running_mean = Param::zeros("bn.running_mean", vec![channels]);
        let mut running_var = Param::filled("bn.running_var", vec![channels], 1.0);
        running_mean.frozen = true;
        running_var.frozen = true;
        Self {
            channels,
            momentum,
            eps: 1e-5,
            gamma: Param::filled("bn.gamma", vec![channels], 1.0),
            beta: Param::zeros("bn.beta", vec![channels]),
            running_mean,
            running_var,
        }
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running(&mut self, mean: &[f64], var_unbiased: &[f64]) {
        let m = self.momentum;
        for c in 0..self.channels {
            self.running_mean.value[c] = m * self.running_mean.value[c] + (1.0 - m) * mean[c];
            self.running_var.value[c] = m * self.running_var.value[c] + (1.0 - m) * var_unbiased[c];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        let mut weight = Param::zeros("dense.weight", vec![inputs, outputs]);
        weight.value = glorot_normal(rng, inputs, outputs, weight.len());
        Self {
            inputs,
            outputs,
            weight,
            bias: Param::zeros("dense.bias", vec![outputs]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm2d(BatchNorm2d),
    Relu,
    /// 2x2 max pooling, stride 2.
    MaxPool2d,
    /// Capsule squash over groups of `capsule_dim` channels at each location.
    Squash {
        capsule_dim: usize,
    },
    Flatten,
    Dense(Dense),
    Softmax,
}

/// State saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Output(Tensor),
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
        batch_mean: Vec<f64>,
        batch_var_unbiased: Vec<f64>,
    },
    MaxPool {
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    Shape(Vec<usize>),
}

fn expect_rank(x: &Tensor, rank: usize, layer: &str) -> Result<()> {
    if x.shape().len() != rank {
        return Err(NnetError::Shape(format!(
            "{layer} expects a rank-{rank} input, got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, col: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let src = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - pad;
                        *o = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            srow[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize, dx: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    dx.fill(0.0);
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - pad;
                        if sx >= 0 && sx < w as isize {
                            dx[ci * hw + sy as usize * w + sx as usize] += src[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

fn map_samples<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if data_parallel() {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm2d(_) => "batch_norm",
            Layer::Relu => "relu",
            Layer::MaxPool2d => "max_pool",
            Layer::Squash { .. } => "squash",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Softmax => "softmax",
        }
    }

    /// Trainable parameter blocks, in a fixed order.
    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv2d(l) => vec![&l.weight, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm2d(l) => vec![&l.gamma, &l.beta],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm2d(l) => vec![&mut l.gamma, &mut l.beta],
            _ => Vec::new(),
        }
    }

    /// Parameters followed by non-trainable buffers (batch-norm statistics).
    pub fn blocks(&self) -> Vec<&Param> {
        let mut v = self.params();
        if let Layer::BatchNorm2d(l) = self {
            v.push(&l.running_mean);
            v.push(&l.running_var);
        }
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::BatchNorm2d(l) => vec![
                &mut l.gamma,
                &mut l.beta,
                &mut l.running_mean,
                &mut l.running_var,
            ],
            other => other.params_mut(),
        }
    }

    pub fn has_params(&self) -> bool {
        !self.params().is_empty()
    }

    /// True when the layer has parameters and all of them are frozen.
    pub fn is_frozen(&self) -> bool {
        let p = self.params();
        !p.is_empty() && p.iter().all(|p| p.frozen)
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for p in self.params_mut() {
            p.frozen = frozen;
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Cache)> {
        match self {
            Layer::Conv2d(l) => conv_forward(l, x),
            Layer::BatchNorm2d(l) => bn_forward(l, x, mode),
            Layer::Relu => {
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                Ok((y.clone(), Cache::Output(y)))
            }
            Layer::MaxPool2d => pool_forward(x),
            Layer::Squash { capsule_dim } => squash_forward(x, *capsule_dim),
            Layer::Flatten => {
                let shape = x.shape().to_vec();
                let y = x.clone().reshape(vec![x.batch(), x.item_len()])?;
                Ok((y, Cache::Shape(shape)))
            }
            Layer::Dense(l) => dense_forward(l, x),
            Layer::Softmax => {
                expect_rank(x, 2, "softmax")?;
                let k = x.shape()[1];
                let mut y = x.clone();
                for row in y.data_mut().chunks_mut(k) {
                    softmax_in_place(row);
                }
                Ok((y.clone(), Cache::Output(y)))
            }
        }
    }

    /// Backward pass. Returns the input gradient (when `need_input`) and the
    /// gradients of [`Layer::params`] in order.
    pub fn backward(
        &self,
        cache: &Cache,
        grad: &Tensor,
        need_input: bool,
    ) -> Result<(Option<Tensor>, Vec<Vec<f64>>)> {
        match (self, cache) {
            (Layer::Conv2d(l), Cache::Input(x)) => conv_backward(l, x, grad, need_input),
            (Layer::BatchNorm2d(l), c @ Cache::BatchNorm { .. }) => Ok(bn_backward(l, c, grad)),
            (Layer::Relu, Cache::Output(y)) => {
                let mut dx = grad.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
                Ok((Some(dx), Vec::new()))
            }
            (
                Layer::MaxPool2d,
                Cache::MaxPool {
                    argmax,
                    input_shape,
                },
            ) => {
                let mut dx = Tensor::zeros(input_shape.clone());
                for (&src, &g) in argmax.iter().zip(grad.data()) {
                    dx.data_mut()[src] += g;
                }
                Ok((Some(dx), Vec::new()))
            }
            (Layer::Squash { capsule_dim }, Cache::Input(x)) => {
                Ok((Some(squash_backward(x, grad, *capsule_dim)), Vec::new()))
            }
            (Layer::Flatten, Cache::Shape(shape)) => {
                Ok((Some(grad.clone().reshape(shape.clone())?), Vec::new()))
            }
            (Layer::Dense(l), Cache::Input(x)) => Ok(dense_backward(l, x, grad, need_input)),
            (Layer::Softmax, Cache::Output(y)) => {
                let k = y.shape()[1];
                let mut dx = grad.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(k).zip(y.data().chunks(k)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                    for (d, &yv) in drow.iter_mut().zip(yrow) {
                        *d = yv * (*d - dot);
                    }
                }
                Ok((Some(dx), Vec::new()))
            }
            (layer, _) => Err(NnetError::Contract(format!(
                "cache does not belong to a {} layer",
                layer.kind()
            ))),
        }
    }
}

fn conv_forward(l: &Conv2d, x: &Tensor) -> Result<(Tensor, Cache)> {
    expect_rank(x, 4, "conv2d")?;
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if c != l.in_channels {
        return Err(NnetError::Shape(format!(
            "conv2d expects {} channels, got {c}",
            l.in_channels
        )));
    }
    let (o, k, hw) = (l.out_channels, l.kernel, h * w);
    let ckk = c * k * k;
    let outs = map_samples(b, |i| {
        let mut col = vec![0.0; ckk * hw];
        im2col(x.item(i), c, h, w, k, &mut col);
        let mut out = vec![0.0; o * hw];
        gemm(
            o,
            ckk,
            hw,
            &l.weight.value,
            false,
            &col,
            false,
            0.0,
            &mut out,
        );
        for (oc, chunk) in out.chunks_mut(hw).enumerate() {
            let bias = l.bias.value[oc];
            chunk.iter_mut().for_each(|v| *v += bias);
        }
        out
    });
    let y = Tensor::new(vec![b, o, h, w], outs.concat())?;
    Ok((y, Cache::Input(x.clone())))
}

fn conv_backward(
    l: &Conv2d,
    x: &Tensor,
    grad: &Tensor,
    need_input: bool,
) -> Result<(Option<Tensor>, Vec<Vec<f64>>)> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k, hw) = (l.out_channels, l.kernel, h * w);
    let ckk = c * k * k;
    let per_sample = map_samples(b, |i| {
        let g = grad.item(i);
        let mut col = vec![0.0; ckk * hw];
        im2col(x.item(i), c, h, w, k, &mut col);
        let mut dw = vec![0.0; o * ckk];
        gemm(o, hw, ckk, g, false, &col, true, 0.0, &mut dw);
        let db: Vec<f64> = g.chunks(hw).map(|ch| ch.iter().sum()).collect();
        let dx = need_input.then(|| {
            gemm(ckk, o, hw, &l.weight.value, true, g, false, 0.0, &mut col);
            let mut dx = vec![0.0; c * hw];
            col2im(&col, c, h, w, k, &mut dx);
            dx
        });
        (dw, db, dx)
    });
    let mut dw = vec![0.0; o * ckk];
    let mut db = vec![0.0; o];
    let mut dx_all = Vec::with_capacity(if need_input { b * c * hw } else { 0 });
    for (sw, sb, sx) in per_sample {
        dw.iter_mut().zip(&sw).for_each(|(a, v)| *a += v);
        db.iter_mut().zip(&sb).for_each(|(a, v)| *a += v);
        if let Some(sx) = sx {
            dx_all.extend_from_slice(&sx);
        }
    }
    let dx = if need_input {
        Some(Tensor::new(x.shape().to_vec(), dx_all)?)
    } else {
        None
    };
    Ok((dx, vec![dw, db]))
}

fn bn_dims(l: &BatchNorm2d, x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.shape().len() < 2 || x.shape()[1] != l.channels {
        return Err(NnetError::Shape(format!(
            "batch norm expects [batch, {}, ..], got {:?}",
            l.channels,
            x.shape()
        )));
    }
    let spatial: usize = x.shape().iter().skip(2).product();
    Ok((x.batch(), l.channels, spatial))
}

fn bn_forward(l: &BatchNorm2d, x: &Tensor, mode: Mode) -> Result<(Tensor, Cache)> {
    let (b, c, s) = bn_dims(l, x)?;
    let n = (b * s) as f64;
    let data = x.data();
    let idx = |bi: usize, ci: usize, si: usize| (bi * c + ci) * s + si;
    let train = mode == Mode::Train;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    let mut var_unbiased = vec![0.0; c];
    if train {
        for ci in 0..c {
            let mut acc = 0.0;
            for bi in 0..b {
                for si in 0..s {
                    acc += data[idx(bi, ci, si)];
                }
            }
            let m = acc / n;
            let mut sq = 0.0;
            for bi in 0..b {
                for si in 0..s {
                    let d = data[idx(bi, ci, si)] - m;
                    sq += d * d;
                }
            }
            mean[ci] = m;
            var[ci] = sq / n;
            var_unbiased[ci] = if n > 1.0 { sq / (n - 1.0) } else { 0.0 };
        }
    } else {
        mean.copy_from_slice(&l.running_mean.value);
        var.copy_from_slice(&l.running_var.value);
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + l.eps).sqrt()).collect();
    let mut xhat = vec![0.0; data.len()];
    let mut y = vec![0.0; data.len()];
    for bi in 0..b {
        for ci in 0..c {
            let (g, be) = (l.gamma.value[ci], l.beta.value[ci]);
            for si in 0..s {
                let i = idx(bi, ci, si);
                let xh = (data[i] - mean[ci]) * inv_std[ci];
                xhat[i] = xh;
                y[i] = g * xh + be;
            }
        }
    }
    let cache = Cache::BatchNorm {
        xhat,
        inv_std,
        train,
        batch_mean: if train { mean } else { Vec::new() },
        batch_var_unbiased: if train { var_unbiased } else { Vec::new() },
    };
    Ok((Tensor::new(x.shape().to_vec(), y)?, cache))
}

fn bn_backward(l: &BatchNorm2d, cache: &Cache, grad: &Tensor) -> (Option<Tensor>, Vec<Vec<f64>>) {
    let Cache::BatchNorm {
        xhat,
        inv_std,
        train,
        ..
    } = cache
    else {
        unreachable!("checked by caller")
    };
    let c = l.channels;
    let b = grad.batch();
    let s = grad.len() / (b * c);
    let n = (b * s) as f64;
    let g = grad.data();
    let idx = |bi: usize, ci: usize, si: usize| (bi * c + ci) * s + si;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dx = vec![0.0; g.len()];
    for ci in 0..c {
        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
        for bi in 0..b {
            for si in 0..s {
                let i = idx(bi, ci, si);
                sum_dy += g[i];
                sum_dy_xhat += g[i] * xhat[i];
            }
        }
        dgamma[ci] = sum_dy_xhat;
        dbeta[ci] = sum_dy;
        let gamma = l.gamma.value[ci];
        for bi in 0..b {
            for si in 0..s {
                let i = idx(bi, ci, si);
                dx[i] = if *train {
                    // d xhat = gamma * dy; sums of d xhat are gamma * sums of dy
                    gamma * inv_std[ci] / n * (n * g[i] - sum_dy - xhat[i] * sum_dy_xhat)
                } else {
                    gamma * inv_std[ci] * g[i]
                };
            }
        }
    }
    let dx = Tensor::new(grad.shape().to_vec(), dx).expect("same shape as grad");
    (Some(dx), vec![dgamma, dbeta])
}

fn pool_forward(x: &Tensor) -> Result<(Tensor, Cache)> {
    expect_rank(x, 4, "max_pool")?;
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(NnetError::Shape(format!("cannot pool a {h}x{w} map")));
    }
    let data = x.data();
    let mut y = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                y.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(vec![b, c, oh, ow], y)?,
        Cache::MaxPool {
            argmax,
            input_shape: x.shape().to_vec(),
        },
    ))
}

/// Capsule layout: channel axis grouped into capsules of `d` values; the
/// trailing axes (if any) index locations.
fn capsule_layout(x: &Tensor, d: usize) -> Result<(usize, usize, usize)> {
    if x.shape().len() < 2 || d == 0 || !x.shape()[1].is_multiple_of(d) {
        return Err(NnetError::Shape(format!(
            "cannot group {:?} into capsules of {d}",
            x.shape()
        )));
    }
    let c = x.shape()[1];
    let s: usize = x.shape().iter().skip(2).product();
    Ok((x.batch(), c, s))
}

/// `v = (|s|^2 / (1 + |s|^2)) * s / |s|`, zero for a zero vector.
pub fn squash(s: &[f64]) -> Vec<f64> {
    let n2: f64 = s.iter().map(|v| v * v).sum();
    if n2 == 0.0 {
        return vec![0.0; s.len()];
    }
    let n = n2.sqrt();
    let scale = n / (1.0 + n2);
    s.iter().map(|v| v * scale).collect()
}

fn squash_forward(x: &Tensor, d: usize) -> Result<(Tensor, Cache)> {
    let (b, c, s) = capsule_layout(x, d)?;
    let mut y = x.clone();
    let data = y.data_mut();
    let mut buf = vec![0.0; d];
    for bi in 0..b {
        for g in 0..c / d {
            for si in 0..s {
                let at = |j: usize| (bi * c + g * d + j) * s + si;
                for (j, v) in buf.iter_mut().enumerate() {
                    *v = data[at(j)];
                }
                for (j, v) in squash(&buf).into_iter().enumerate() {
                    data[at(j)] = v;
                }
            }
        }
    }
    Ok((y, Cache::Input(x.clone())))
}

fn squash_backward(x: &Tensor, grad: &Tensor, d: usize) -> Tensor {
    let (b, c, s) = capsule_layout(x, d).expect("validated in forward");
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let (xs, gs) = (x.data(), grad.data());
    for bi in 0..b {
        for g in 0..c / d {
            for si in 0..s {
                let at = |j: usize| (bi * c + g * d + j) * s + si;
                let n2: f64 = (0..d).map(|j| xs[at(j)] * xs[at(j)]).sum();
                if n2 == 0.0 {
                    continue;
                }
                let n = n2.sqrt();
                // v = s f(n), f(n) = n / (1 + n^2), f'(n) = (1 - n^2) / (1 + n^2)^2
                let f = n / (1.0 + n2);
                let fprime_over_n = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2) * n);
                let gs_dot: f64 = (0..d).map(|j| gs[at(j)] * xs[at(j)]).sum();
                for j in 0..d {
                    dx.data_mut()[at(j)] = gs[at(j)] * f + xs[at(j)] * fprime_over_n * gs_dot;
                }
            }
        }
    }
    dx
}

fn dense_forward(l: &Dense, x: &Tensor) -> Result<(Tensor, Cache)> {
    if x.shape().len() != 2 || x.shape()[1] != l.inputs {
        return Err(NnetError::Shape(format!(
            "dense expects [batch, {}], got {:?}",
            l.inputs,
            x.shape()
        )));
    }
    let b = x.batch();
    let mut y = vec![0.0; b * l.outputs];
    gemm(
        b,
        l.inputs,
        l.outputs,
        x.data(),
        false,
        &l.weight.value,
        false,
        0.0,
        &mut y,
    );
    for row in y.chunks_mut(l.outputs) {
        row.iter_mut().zip(&l.bias.value).for_each(|(v, b)| *v += b);
    }
    Ok((Tensor::new(vec![b, l.outputs], y)?, Cache::Input(x.clone())))
}

fn dense_backward(
    l: &Dense,
    x: &Tensor,
    grad: &Tensor,
    need_input: bool,
) -> (Option<Tensor>, Vec<Vec<f64>>) {
    let b = x.batch();
    let mut dw = vec![0.0; l.inputs * l.outputs];
    gemm(
        l.inputs,
        b,
        l.outputs,
        x.data(),
        true,
        grad.data(),
        false,
        0.0,
        &mut dw,
    );
    let mut db = vec![0.0; l.outputs];
    for row in grad.data().chunks(l.outputs) {
        db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    let dx = need_input.then(|| {
        let mut dx = vec![0.0; b * l.inputs];
        gemm(
            b,
            l.outputs,
            l.inputs,
            grad.data(),
            false,
            &l.weight.value,
            true,
            0.0,
            &mut dx,
        );
        Tensor::new(vec![b, l.inputs], dx).expect("dense input shape")
    });
    (dx, vec![dw, db])
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn squash_norms() {
        assert_eq!(squash(&[0.0, 0.0, 0.0]), vec![0.0; 3]);
        let v = squash(&[0.6, 0.8]);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 0.5).abs() < 1e-15);
        let v = squash(&[100.0, 0.0]);
        assert!((v[0] - 0.9999).abs() < 1e-4);
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::new(&mut rng, 2, 3, 3);
        let x: Vec<f64> = (0..2 * 2 * 5 * 4)
            .map(|i| ((i * 13 % 7) as f64) - 3.0)
            .collect();
        let x = Tensor::new(vec![2, 2, 5, 4], x).unwrap();
        let (y, _) = Layer::Conv2d(conv.clone()).forward(&x, Mode::Eval).unwrap();
        for b in 0..2 {
            for o in 0..3 {
                for yy in 0..5isize {
                    for xx in 0..4isize {
                        let mut acc = conv.bias.value[o];
                        for c in 0..2 {
                            for ky in 0..3isize {
                                for kx in 0..3isize {
                                    let (sy, sx) = (yy + ky - 1, xx + kx - 1);
                                    if sy < 0 || sx < 0 || sy >= 5 || sx >= 4 {
                                        continue;
                                    }
                                    let wv = conv.weight.value
                                        [((o * 2 + c) * 3 + ky as usize) * 3 + kx as usize];
                                    acc += wv
                                        * x.data()
                                            [((b * 2 + c) * 5 + sy as usize) * 4 + sx as usize];
                                }
                            }
                        }
                        let got = y.data()[((b * 3 + o) * 5 + yy as usize) * 4 + xx as usize];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn pool_picks_maxima() {
        let x = Tensor::new(
            vec![1, 1, 2, 4],
            vec![1.0, 5.0, 2.0, 2.0, 3.0, 0.0, 9.0, 1.0],
        )
        .unwrap();
        let (y, _) = Layer::MaxPool2d.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[5.0, 9.0]);
    }

    #[test]
    fn glorot_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = glorot_normal(&mut rng, 100, 100, 20000);
        let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        assert!((var - 0.01).abs() < 0.001, "{var}");
        assert!(v.iter().all(|x| x.abs() <= 2.0 * 0.1 / 0.8796 + 1e-12));
    }

    #[test]
    fn parallel_mode_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let conv = Layer::Conv2d(Conv2d::new(&mut rng, 3, 4, 3));
        let x = Tensor::new(
            vec![5, 3, 6, 6],
            (0..540).map(|i| (i as f64 * 0.1).sin()).collect(),
        )
        .unwrap();
        let (y1, c1) = conv.forward(&x, Mode::Train).unwrap();
        let (_, g1) = conv.backward(&c1, &y1, true).unwrap();
        set_data_parallel(true);
        let (y2, c2) = conv.forward(&x, Mode::Train).unwrap();
        let (_, g2) = conv.backward(&c2, &y2, true).unwrap();
        set_data_parallel(false);
        assert_eq!(y1, y2);
        assert_eq!(g1, g2);
    }
}
