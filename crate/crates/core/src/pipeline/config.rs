//! TOML run configuration. Every field has a default, so an empty file (or
//! no file) is valid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SynthConfig;
use super::{parse_err, read_text, Result};
use crate::heuristic::HeuristicConfig;
use crate::nnet::{IzeNetConfig, TrainConfig};
use crate::pupil::PupilConfig;

/// Environment variable naming the directory that relative run directories
/// are resolved against.
pub const RUN_ROOT_ENV: &str = "GAZEZONE_RUN_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Keep frames whose index is a multiple of this.
    pub stride: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { stride: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratio: 0.7,
            seed: 0,
        }
    }
}

/// Which part of the face is fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputRegion {
    /// Square crop around both eyes, from the eye landmarks.
    #[default]
    Eyes,
    Face,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretextConfig {
    pub train: TrainConfig,
    pub input_region: InputRegion,
    /// Drop samples flagged for excessive roll.
    pub exclude_roll_flagged: bool,
    /// Train on temporally smoothed labels rather than per-frame ones.
    pub use_smoothed: bool,
}

impl Default for PretextConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            input_region: InputRegion::Eyes,
            exclude_roll_flagged: true,
            use_smoothed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptSettings {
    pub linear_probe: TrainConfig,
    pub fine_tune: TrainConfig,
    pub head_width: usize,
    pub head_seed: u64,
    /// Random resize/crop/flip during linear probing.
    pub augment: bool,
    pub knn_k: usize,
}

impl Default for AdaptSettings {
    fn default() -> Self {
        let lp = crate::nnet::AdaptConfig::linear_probe();
        let ft = crate::nnet::AdaptConfig::fine_tune();
        Self {
            linear_probe: TrainConfig {
                augment: None,
                ..lp.train
            },
            fine_tune: ft.train,
            head_width: lp.head_width,
            head_seed: 0,
            augment: true,
            knn_k: crate::nnet::knn::DEFAULT_K,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkPreset {
    /// 32x32 input with narrow conv widths.
    #[default]
    Toy,
    /// 128x128 input with the full widths.
    Full,
}

/// Network architecture: a preset plus optional per-field overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSection {
    pub preset: NetworkPreset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capsule_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capsule_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fc: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bn_momentum: Option<f64>,
    pub seed: u64,
}

impl NetworkSection {
    pub fn resolve(&self) -> IzeNetConfig {
        let mut cfg = match self.preset {
            NetworkPreset::Toy => IzeNetConfig::toy(),
            NetworkPreset::Full => IzeNetConfig::full(),
        };
        if let Some(v) = self.input_size {
            cfg.input_size = v;
        }
        if let Some(v) = &self.widths {
            cfg.widths = v.clone();
        }
        if let Some(v) = self.capsule_count {
            cfg.capsules.count = v;
        }
        if let Some(v) = self.capsule_dim {
            cfg.capsules.dim = v;
        }
        if let Some(v) = &self.fc {
            cfg.fc = v.clone();
        }
        if let Some(v) = self.bn_momentum {
            cfg.bn_momentum = v;
        }
        cfg.seed = self.seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct PipelineConfig {
    pub ingest: IngestConfig,
    pub split: SplitConfig,
    pub pupil: PupilConfig,
    pub heuristic: HeuristicConfig,
    pub network: NetworkSection,
    pub pretext: PretextConfig,
    pub adapt: AdaptSettings,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?).map_err(|e| parse_err(path, e))
    }

    /// Loads `path` when given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }
}

/// Resolves a run directory: absolute paths are kept, relative ones are
/// joined onto `$GAZEZONE_RUN_ROOT` when it is set.
pub fn resolve_run_dir(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(RUN_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}
