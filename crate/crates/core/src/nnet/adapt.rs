//! Downstream adaptation: linear probing and fine-tuning.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Augment, Dataset, Targets};
use super::layers::{Dense, Layer};
use super::model::Network;
use super::train::{fit, TrainConfig, TrainLog};
use super::{NnetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Zone,
    Gaze3d,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Zone => "zone",
            Task::Gaze3d => "gaze3d",
        })
    }
}

impl FromStr for Task {
    type Err = NnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zone" => Ok(Task::Zone),
            "gaze3d" => Ok(Task::Gaze3d),
            other => Err(NnetError::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub train: TrainConfig,
    pub head_width: usize,
    /// Seed for the new head's weights.
    pub head_seed: u64,
}

impl AdaptConfig {
    pub fn linear_probe() -> Self {
        Self {
            train: TrainConfig {
                epochs: 15,
                lr: 1e-3,
                momentum: 0.9,
                augment: Some(Augment::default()),
                ..TrainConfig::default()
            },
            head_width: 256,
            head_seed: 0,
        }
    }

    pub fn fine_tune() -> Self {
        Self {
            train: TrainConfig {
                epochs: 20,
                lr: 1e-4,
                momentum: 0.9,
                ..TrainConfig::default()
            },
            head_width: 256,
            head_seed: 0,
        }
    }
}

fn check_targets(task: Task, data: &Dataset) -> Result<()> {
    match (task, data.targets()) {
        (Task::Zone, Targets::Classes { classes: 3, .. }) | (Task::Gaze3d, Targets::Gaze(_)) => {
            Ok(())
        }
        _ => Err(NnetError::Config(format!(
            "dataset labels do not fit the {task} task"
        ))),
    }
}

/// Two hidden fully-connected layers followed by the task output.
pub fn task_head(latent_dim: usize, task: Task, width: usize, seed: u64) -> Vec<Layer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = vec![
        Layer::Dense(Dense::new(&mut rng, latent_dim, width)),
        Layer::Relu,
        Layer::Dense(Dense::new(&mut rng, width, width)),
        Layer::Relu,
    ];
    match task {
        Task::Zone => {
            head.push(Layer::Dense(Dense::new(&mut rng, width, 3)));
            head.push(Layer::Softmax);
        }
        Task::Gaze3d => head.push(Layer::Dense(Dense::new(&mut rng, width, 3))),
    }
    head
}

fn adapt(
    net: &Network,
    train: &Dataset,
    val: &Dataset,
    task: Task,
    cfg: &AdaptConfig,
    freeze: bool,
) -> Result<(Network, TrainLog)> {
    check_targets(task, train)?;
    check_targets(task, val)?;
    let mut adapted = net.clone();
    adapted.replace_head(task_head(
        net.config.latent_dim(),
        task,
        cfg.head_width,
        cfg.head_seed,
    ));
    adapted.set_backbone_frozen(freeze);
    let log = fit(&mut adapted, train, val, &cfg.train)?;
    Ok((adapted, log))
}

/// Trains a fresh head on a frozen backbone. Backbone parameters and
/// batch-norm statistics are left untouched.
pub fn adapt_linear_probe(
    net: &Network,
    train: &Dataset,
    val: &Dataset,
    task: Task,
    cfg: &AdaptConfig,
) -> Result<(Network, TrainLog)> {
    adapt(net, train, val, task, cfg, true)
}

/// Trains a fresh head and every backbone parameter.
pub fn adapt_fine_tune(
    net: &Network,
    train: &Dataset,
    val: &Dataset,
    task: Task,
    cfg: &AdaptConfig,
) -> Result<(Network, TrainLog)> {
    adapt(net, train, val, task, cfg, false)
}
