//! Mini-batch training loop, evaluation and training logs.

use std::fmt::{self, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Augment, Dataset, Targets};
use super::layers::Mode;
use super::loss::{angular_error_deg, cosine_gaze_batch, cross_entropy, GazeVector};
use super::model::Network;
use super::optim::Sgd;
use super::tensor::Tensor;
use super::{NnetError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Inverse-time decay applied per epoch.
    pub decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once the validation metric reaches this value (accuracy for
    /// classification, angular error in degrees for gaze).
    pub target_metric: Option<f64>,
    #[serde(skip)]
    pub augment: Option<Augment>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.001,
            decay: 1e-6,
            momentum: 0.0,
            batch_size: 32,
            seed: 0,
            target_metric: None,
            augment: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    /// Accuracy in `[0, 1]` or mean angular error in degrees.
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// First epoch whose validation metric met the target.
    pub target_epoch: Option<usize>,
}

impl TrainLog {
    pub fn last(&self, split: Split) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.split == split)
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .find(|r| r.split == Split::Val && r.epoch == self.best_epoch)
    }

    pub fn epochs_run(&self) -> usize {
        self.records.iter().map(|r| r.epoch).max().unwrap_or(0)
    }

    /// CSV with header `epoch,split,loss,metric`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,metric\n");
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.epoch, r.split, r.loss, r.metric).expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<TrainLog> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let bad = || NnetError::Config(format!("malformed training log line {}", n + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                split: match f[1] {
                    "train" => Split::Train,
                    "val" => Split::Val,
                    _ => return Err(bad()),
                },
                loss: f[2].parse().map_err(|_| bad())?,
                metric: f[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(TrainLog {
            records,
            ..TrainLog::default()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
}

fn loss_and_grad(output: &Tensor, targets: &Targets) -> Result<(f64, Tensor)> {
    match targets {
        Targets::Classes { labels, .. } => cross_entropy(output, labels),
        Targets::Gaze(g) => cosine_gaze_batch(output, g),
    }
}

fn check_task(net: &Network, targets: &Targets) -> Result<()> {
    let ok = match targets {
        Targets::Classes { classes, .. } => {
            net.outputs_probabilities() && net.output_dim() == *classes
        }
        Targets::Gaze(_) => !net.outputs_probabilities() && net.output_dim() == 3,
    };
    if ok {
        Ok(())
    } else {
        Err(NnetError::Config(
            "network head does not match the dataset targets".into(),
        ))
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode loss and metric over a whole dataset.
pub fn evaluate(net: &Network, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(NnetError::Config("cannot evaluate an empty split".into()));
    }
    check_task(net, data.targets())?;
    let (mut loss, mut metric) = (0.0, 0.0);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, t) = data.batch(chunk)?;
        let out = net.trace(&x, Mode::Eval)?.output;
        loss += loss_and_grad(&out, &t)?.0 * chunk.len() as f64;
        let k = out.shape()[1];
        match &t {
            Targets::Classes { labels, .. } => {
                metric += out
                    .data()
                    .chunks(k)
                    .zip(labels)
                    .filter(|(row, &l)| argmax(row) == l)
                    .count() as f64;
            }
            Targets::Gaze(g) => {
                for (row, &truth) in out.data().chunks(k).zip(g) {
                    metric += angular_error_deg(truth, GazeVector::from_slice(row))?;
                }
            }
        }
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        metric: metric / n,
    })
}

fn better(targets: &Targets, candidate: f64, incumbent: f64) -> bool {
    match targets {
        Targets::Classes { .. } => candidate > incumbent,
        Targets::Gaze(_) => candidate < incumbent,
    }
}

fn meets(targets: &Targets, metric: f64, target: f64) -> bool {
    match targets {
        Targets::Classes { .. } => metric >= target,
        Targets::Gaze(_) => metric <= target,
    }
}

/// Trains `net` in place and leaves it holding the parameters of the best
/// validation epoch (epoch 0 is the starting point).
pub fn fit(
    net: &mut Network,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if train.is_empty() || val.is_empty() {
        return Err(NnetError::Config(
            "training and validation splits must be non-empty".into(),
        ));
    }
    if cfg.batch_size == 0 {
        return Err(NnetError::Config("batch size must be positive".into()));
    }
    check_task(net, train.targets())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sgd = Sgd::new(cfg.lr, cfg.decay, cfg.momentum);
    let mut log = TrainLog::default();
    let record = |log: &mut TrainLog, epoch, split, e: Evaluation| {
        log.records.push(EpochRecord {
            epoch,
            split,
            loss: e.loss,
            metric: e.metric,
        });
    };
    let e_train = evaluate(net, train, cfg.batch_size)?;
    let e_val = evaluate(net, val, cfg.batch_size)?;
    record(&mut log, 0, Split::Train, e_train);
    record(&mut log, 0, Split::Val, e_val);
    let mut best = (e_val.metric, net.clone());
    let reached = |m: f64| {
        cfg.target_metric
            .is_some_and(|t| meets(train.targets(), m, t))
    };
    if reached(e_val.metric) {
        log.target_epoch = Some(0);
        return Ok(log);
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, t) = match &cfg.augment {
                Some(aug) => train.augmented_batch(chunk, aug, &mut rng)?,
                None => train.batch(chunk)?,
            };
            let trace = net.trace(&x, Mode::Train)?;
            let (loss, grad) = loss_and_grad(&trace.output, &t)?;
            let grads = net.backward(&trace, &grad)?;
            net.commit_batch_stats(&trace);
            sgd.step(net, &grads, epoch - 1)?;
            loss_sum += loss * chunk.len() as f64;
            if let Targets::Classes { labels, .. } = &t {
                let k = trace.output.shape()[1];
                correct += trace
                    .output
                    .data()
                    .chunks(k)
                    .zip(labels)
                    .filter(|(r, &l)| argmax(r) == l)
                    .count() as f64;
            }
        }
        let n = train.len() as f64;
        let train_metric = match train.targets() {
            Targets::Classes { .. } => correct / n,
            Targets::Gaze(_) => evaluate(net, train, cfg.batch_size)?.metric,
        };
        record(
            &mut log,
            epoch,
            Split::Train,
            Evaluation {
                loss: loss_sum / n,
                metric: train_metric,
            },
        );
        let e_val = evaluate(net, val, cfg.batch_size)?;
        record(&mut log, epoch, Split::Val, e_val);
        log::debug!(
            "epoch {epoch}: train loss {:.4}, val metric {:.4}",
            loss_sum / n,
            e_val.metric
        );
        if better(train.targets(), e_val.metric, best.0) {
            best = (e_val.metric, net.clone());
            log.best_epoch = epoch;
        }
        if reached(e_val.metric) {
            log.target_epoch = Some(epoch);
            break;
        }
    }
    *net = best.1;
    Ok(log)
}

/// Trains the 3-way zone classifier on pseudo-labeled data.
pub fn train_pretext(
    net: &mut Network,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    for split in [train, val] {
        if !matches!(split.targets(), Targets::Classes { classes: 3, .. }) {
            return Err(NnetError::Config(
                "pretext training needs 3-class zone labels".into(),
            ));
        }
    }
    fit(net, train, val, cfg)
}
