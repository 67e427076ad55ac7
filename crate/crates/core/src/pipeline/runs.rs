//! Training and adaptation runs driven from manifests and label files.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::annotate::read_label_rows;
use super::config::{InputRegion, PipelineConfig};
use super::manifest::{
    ingest, split_by_subject, subsample_frames, Manifest, ManifestEntry, SplitSpec,
};
use super::{parse_err, path_key, write_file, PipelineError, Result};
use crate::geom::Rect;
use crate::heuristic::ZoneLabel;
use crate::imaging::RgbImage;
use crate::landmarks::{FaceSample, LEFT_EYE, RIGHT_EYE};
use crate::nnet::checkpoint::{load_checkpoint, save_checkpoint};
use crate::nnet::knn::KnnIndex;
use crate::nnet::train::evaluate;
use crate::nnet::{
    adapt_fine_tune, adapt_linear_probe, angular_error_deg, build_izenet, train_pretext,
    AdaptConfig, Augment, Dataset, GazeVector, Network, Targets, Task, TrainLog,
};

pub const PRETEXT_CHECKPOINT: &str = "pretext.ckpt";
pub const PRETEXT_LOG: &str = "train_log.csv";
pub const PRETEXT_SUMMARY: &str = "pretext_summary.json";
pub const SPLIT_FILE: &str = "split.json";

/// Padding around the eye landmarks for the two-eye input crop, as a
/// fraction of their horizontal extent.
const EYE_CROP_PADDING: f64 = 0.1;

/// Square crop around both eyes, clipped to the image.
pub fn eye_band_crop(sample: &FaceSample) -> Result<RgbImage> {
    let pts: Vec<_> = LEFT_EYE
        .chain(RIGHT_EYE)
        .map(|i| sample.landmarks.get(i))
        .collect();
    let (x0, x1) = pts
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.x), b.max(p.x)));
    let (y0, y1) = pts
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.y), b.max(p.y)));
    let side = (x1 - x0) * (1.0 + 2.0 * EYE_CROP_PADDING);
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let rect = Rect::from_span_clipped(
        cx - side / 2.0,
        cy - side / 2.0,
        cx + side / 2.0,
        cy + side / 2.0,
        sample.rgb.width(),
        sample.rgb.height(),
    )
    .ok_or_else(|| PipelineError::Config("eye crop lies outside the image".into()))?;
    Ok(sample.rgb.crop(rect)?)
}

/// The network input image for one sample (before resizing).
pub fn network_input(sample: &FaceSample, region: InputRegion) -> Result<RgbImage> {
    match region {
        InputRegion::Eyes => eye_band_crop(sample),
        InputRegion::Face => Ok(sample.rgb.clone()),
    }
}

fn load_inputs(
    manifest: &Manifest,
    entries: &[&ManifestEntry],
    region: InputRegion,
) -> Result<Vec<RgbImage>> {
    entries
        .par_iter()
        .map(|e| network_input(&manifest.load_sample(e)?, region))
        .collect()
}

fn prepare_manifest(manifest_path: &Path, cfg: &PipelineConfig) -> Result<(Manifest, SplitSpec)> {
    let (manifest, rejects) = ingest(manifest_path)?;
    if !rejects.is_empty() {
        log::warn!("{} manifest entries rejected", rejects.len());
    }
    let manifest = subsample_frames(&manifest, cfg.ingest.stride)?.sorted();
    let split = split_by_subject(&manifest, cfg.split.ratio, cfg.split.seed)?;
    if split.val_subjects.is_empty() {
        return Err(PipelineError::Config(
            "training needs at least one validation subject".into(),
        ));
    }
    Ok((manifest, split))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretextRunSummary {
    pub train_samples: usize,
    pub val_samples: usize,
    pub excluded: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub target_epoch: Option<usize>,
}

fn build_dataset(
    manifest: &Manifest,
    entries: &[&ManifestEntry],
    targets: Targets,
    cfg: &PipelineConfig,
) -> Result<Dataset> {
    let images = load_inputs(manifest, entries, cfg.pretext.input_region)?;
    Ok(Dataset::new(
        &images,
        targets,
        cfg.network.resolve().input_size,
    )?)
}

/// Trains the pretext zone classifier on annotation output and writes
/// `pretext.ckpt`, `train_log.csv`, `split.json` and `pretext_summary.json`.
pub fn run_pretext(
    manifest_path: &Path,
    labels_dir: &Path,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<PretextRunSummary> {
    let (manifest, split) = prepare_manifest(manifest_path, cfg)?;
    let labels: HashMap<(String, String, u64), ZoneLabel> = read_label_rows(labels_dir)?
        .into_iter()
        .filter(|r| !(cfg.pretext.exclude_roll_flagged && r.roll_flagged()))
        .filter_map(|r| {
            r.zone_label(cfg.pretext.use_smoothed)
                .map(|z| ((r.subject_id, r.video_id, r.frame_index), z))
        })
        .collect();
    let mut parts: [Vec<(&ManifestEntry, usize)>; 2] = [Vec::new(), Vec::new()];
    let mut excluded = 0;
    for e in &manifest.entries {
        let key = (e.subject_id.clone(), e.video_id.clone(), e.frame_index);
        match labels.get(&key) {
            Some(z) => parts[usize::from(split.is_val(&e.subject_id))].push((e, z.index())),
            None => excluded += 1,
        }
    }
    let [train_part, val_part] = parts;
    if train_part.is_empty() || val_part.is_empty() {
        return Err(PipelineError::Config(
            "a split has no labeled samples".into(),
        ));
    }
    let make = |part: &[(&ManifestEntry, usize)]| {
        let entries: Vec<&ManifestEntry> = part.iter().map(|p| p.0).collect();
        let labels = part.iter().map(|p| p.1).collect();
        build_dataset(
            &manifest,
            &entries,
            Targets::Classes { labels, classes: 3 },
            cfg,
        )
    };
    let (train, val) = (make(&train_part)?, make(&val_part)?);

    let mut net = build_izenet(&cfg.network.resolve())?;
    let log = train_pretext(&mut net, &train, &val, &cfg.pretext.train)?;
    let best_val_accuracy = log.best().map_or(0.0, |r| r.metric);
    let summary = PretextRunSummary {
        train_samples: train.len(),
        val_samples: val.len(),
        excluded,
        epochs_run: log.epochs_run(),
        best_epoch: log.best_epoch,
        best_val_accuracy,
        target_epoch: log.target_epoch,
    };
    write_outputs(
        out_dir,
        &net,
        &log,
        &summary,
        PRETEXT_CHECKPOINT,
        PRETEXT_LOG,
        PRETEXT_SUMMARY,
    )?;
    write_file(
        &out_dir.join(SPLIT_FILE),
        serde_json::to_string_pretty(&split).expect("plain struct") + "\n",
    )?;
    Ok(summary)
}

fn write_outputs<S: Serialize>(
    out_dir: &Path,
    net: &Network,
    log: &TrainLog,
    summary: &S,
    ckpt: &str,
    log_name: &str,
    summary_name: &str,
) -> Result<()> {
    let summary_json = serde_json::to_string_pretty(summary).expect("plain struct");
    let meta = BTreeMap::from([
        ("best_epoch".to_string(), log.best_epoch.to_string()),
        ("epochs_run".to_string(), log.epochs_run().to_string()),
        ("summary".to_string(), summary_json.clone()),
    ]);
    super::manifest::ensure_dir(out_dir)?;
    save_checkpoint(out_dir.join(ckpt), net, &meta)?;
    write_file(&out_dir.join(log_name), log.to_csv())?;
    write_file(&out_dir.join(summary_name), summary_json + "\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptMode {
    Lp,
    Ft,
    Knn,
}

impl fmt::Display for AdaptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdaptMode::Lp => "lp",
            AdaptMode::Ft => "ft",
            AdaptMode::Knn => "knn",
        })
    }
}

impl FromStr for AdaptMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lp" => Ok(AdaptMode::Lp),
            "ft" => Ok(AdaptMode::Ft),
            "knn" => Ok(AdaptMode::Knn),
            other => Err(PipelineError::Config(format!(
                "unknown adaptation mode {other:?}"
            ))),
        }
    }
}

/// Downstream labels: `image_path` plus `zone` or `gaze_x,gaze_y,gaze_z`.
#[derive(Debug, Clone, Deserialize)]
struct DownstreamRow {
    image_path: String,
    #[serde(default)]
    zone: Option<String>,
    #[serde(default)]
    gaze_x: Option<f64>,
    #[serde(default)]
    gaze_y: Option<f64>,
    #[serde(default)]
    gaze_z: Option<f64>,
}

enum DownstreamLabel {
    Zone(usize),
    Gaze(GazeVector),
}

fn read_downstream(path: &Path, task: Task) -> Result<HashMap<PathBuf, DownstreamLabel>> {
    let root = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(path, e))?;
    let mut out = HashMap::new();
    for row in reader.deserialize::<DownstreamRow>() {
        let row = row.map_err(|e| parse_err(path, e))?;
        let label = match task {
            Task::Zone => {
                let z: ZoneLabel = row
                    .zone
                    .as_deref()
                    .ok_or_else(|| parse_err(path, "zone column missing"))?
                    .parse()
                    .map_err(|_| parse_err(path, "bad zone value"))?;
                DownstreamLabel::Zone(z.index())
            }
            Task::Gaze3d => match (row.gaze_x, row.gaze_y, row.gaze_z) {
                (Some(x), Some(y), Some(z)) => DownstreamLabel::Gaze(GazeVector::new(x, y, z)),
                _ => return Err(parse_err(path, "gaze_x, gaze_y, gaze_z columns required")),
            },
        };
        out.insert(path_key(root, &row.image_path), label);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptRunSummary {
    pub mode: AdaptMode,
    pub task: Task,
    pub train_samples: usize,
    pub val_samples: usize,
    /// Accuracy for the zone task, mean angular error (degrees) for gaze.
    pub val_metric: f64,
    pub epochs_run: usize,
    pub backbone_unchanged: Option<bool>,
}

/// Adapts a pretext checkpoint to a downstream task and writes
/// `adapt_<mode>_<task>.*` outputs into `out_dir`.
pub fn run_adapt(
    manifest_path: &Path,
    labels_path: &Path,
    checkpoint: &Path,
    mode: AdaptMode,
    task: Task,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<AdaptRunSummary> {
    if mode == AdaptMode::Knn && task == Task::Gaze3d {
        return Err(PipelineError::Config(
            "k-NN probing supports the zone task only".into(),
        ));
    }
    let (net, _) = load_checkpoint(checkpoint)?;
    let (manifest, split) = prepare_manifest(manifest_path, cfg)?;
    let labels = read_downstream(labels_path, task)?;
    let mut parts: [Vec<(&ManifestEntry, PathBuf)>; 2] = [Vec::new(), Vec::new()];
    for e in &manifest.entries {
        let key = path_key(&manifest.root, &e.image_path);
        if labels.contains_key(&key) {
            parts[usize::from(split.is_val(&e.subject_id))].push((e, key));
        }
    }
    let targets_for = |entries: &[(&ManifestEntry, PathBuf)]| match task {
        Task::Zone => Targets::Classes {
            labels: entries
                .iter()
                .map(|(_, key)| match labels[key] {
                    DownstreamLabel::Zone(z) => z,
                    DownstreamLabel::Gaze(_) => unreachable!("read for the zone task"),
                })
                .collect(),
            classes: 3,
        },
        Task::Gaze3d => Targets::Gaze(
            entries
                .iter()
                .map(|(_, key)| match labels[key] {
                    DownstreamLabel::Gaze(g) => g,
                    DownstreamLabel::Zone(_) => unreachable!("read for the gaze task"),
                })
                .collect(),
        ),
    };
    if parts[0].is_empty() || parts[1].is_empty() {
        return Err(PipelineError::Config(
            "a split has no labeled samples".into(),
        ));
    }
    let entries = |i: usize| parts[i].iter().map(|p| p.0).collect::<Vec<_>>();
    let train = build_dataset(&manifest, &entries(0), targets_for(&parts[0]), cfg)?;
    let val = build_dataset(&manifest, &entries(1), targets_for(&parts[1]), cfg)?;
    let stem = format!("adapt_{mode}_{task}");

    if mode == AdaptMode::Knn {
        let latents = |d: &Dataset| -> Result<Vec<Vec<f64>>> {
            let (x, _) = d.batch(&(0..d.len()).collect::<Vec<_>>())?;
            let z = net.latents(&x)?;
            Ok((0..d.len()).map(|i| z.item(i).to_vec()).collect())
        };
        let class_labels = |d: &Dataset| match d.targets() {
            Targets::Classes { labels, .. } => labels.clone(),
            Targets::Gaze(_) => unreachable!("zone task"),
        };
        let index = KnnIndex::new(&latents(&train)?, &class_labels(&train), 3)?;
        let k = cfg.adapt.knn_k.min(index.len());
        let val_labels = class_labels(&val);
        let mut correct = 0;
        for (q, &truth) in latents(&val)?.iter().zip(&val_labels) {
            correct += usize::from(index.classify(q, k)? == truth);
        }
        let summary = AdaptRunSummary {
            mode,
            task,
            train_samples: train.len(),
            val_samples: val.len(),
            val_metric: correct as f64 / val.len() as f64,
            epochs_run: 0,
            backbone_unchanged: None,
        };
        write_file(
            &out_dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&summary).expect("plain struct") + "\n",
        )?;
        return Ok(summary);
    }

    let train_cfg = match mode {
        AdaptMode::Lp => crate::nnet::TrainConfig {
            augment: cfg.adapt.augment.then(|| Augment {
                flip_class_map: vec![1, 0, 2],
                ..Augment::default()
            }),
            ..cfg.adapt.linear_probe.clone()
        },
        _ => cfg.adapt.fine_tune.clone(),
    };
    let adapt_cfg = AdaptConfig {
        train: train_cfg,
        head_width: cfg.adapt.head_width,
        head_seed: cfg.adapt.head_seed,
    };
    let before = net.backbone_snapshot();
    let (adapted, log) = match mode {
        AdaptMode::Lp => adapt_linear_probe(&net, &train, &val, task, &adapt_cfg)?,
        _ => adapt_fine_tune(&net, &train, &val, task, &adapt_cfg)?,
    };
    let summary = AdaptRunSummary {
        mode,
        task,
        train_samples: train.len(),
        val_samples: val.len(),
        val_metric: evaluate(&adapted, &val, adapt_cfg.train.batch_size)?.metric,
        epochs_run: log.epochs_run(),
        backbone_unchanged: Some(adapted.backbone_snapshot() == before),
    };
    if task == Task::Gaze3d {
        write_angular_errors(
            &out_dir.join(format!("{stem}{}", super::report::ERRORS_SUFFIX)),
            &adapted,
            &val,
        )?;
    }
    write_outputs(
        out_dir,
        &adapted,
        &log,
        &summary,
        &format!("{stem}.ckpt"),
        &format!("{stem}_log.csv"),
        &format!("{stem}.json"),
    )?;
    Ok(summary)
}

/// Per-sample validation angular errors, header `sample,error_deg`.
fn write_angular_errors(path: &Path, net: &Network, val: &Dataset) -> Result<()> {
    let Targets::Gaze(truth) = val.targets() else {
        return Ok(());
    };
    let mut out = String::from("sample,error_deg\n");
    let indices: Vec<usize> = (0..val.len()).collect();
    for chunk in indices.chunks(64) {
        let (x, _) = val.batch(chunk)?;
        let (pred, _) = net.forward(&x)?;
        for (k, &i) in chunk.iter().enumerate() {
            let err = angular_error_deg(truth[i], GazeVector::from_slice(pred.item(k)))?;
            out.push_str(&format!("{i},{err}\n"));
        }
    }
    write_file(path, out)
}
