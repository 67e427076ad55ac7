//! JSON-lines manifests, frame subsampling and subject-wise splitting.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{io_err, parse_err, read_text, write_file, PipelineError, Result};
use crate::landmarks::FaceSample;

/// One manifest line. Paths are relative to the manifest's directory unless
/// absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: String,
    pub landmark_path: String,
    pub subject_id: String,
    pub video_id: String,
    pub frame_index: u64,
}

impl ManifestEntry {
    pub fn key(&self) -> (&str, &str, u64) {
        (&self.subject_id, &self.video_id, self.frame_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// A manifest line or sample that could not be used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based manifest line, 0 when not tied to a line.
    pub line: usize,
    pub image_path: String,
    pub reason: String,
}

impl Manifest {
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn subjects(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.subject_id.clone()).collect()
    }

    pub fn load_sample(&self, entry: &ManifestEntry) -> Result<FaceSample> {
        let sample = FaceSample::load(
            self.resolve(&entry.image_path),
            self.resolve(&entry.landmark_path),
        )?;
        Ok(sample.with_ids(&entry.subject_id, &entry.video_id, entry.frame_index))
    }

    /// Entries sorted by (subject, video, frame).
    pub fn sorted(&self) -> Manifest {
        let mut entries = self.entries.clone();
        entries.sort_by(|a, b| a.key().cmp(&b.key()));
        Manifest {
            root: self.root.clone(),
            entries,
        }
    }

    pub fn with_entries(&self, entries: Vec<ManifestEntry>) -> Manifest {
        Manifest {
            root: self.root.clone(),
            entries,
        }
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("plain struct") + "\n")
            .collect()
    }
}

/// Reads and validates a manifest. Malformed lines, missing files and
/// duplicate (subject, video, frame) keys are collected as rejects.
pub fn ingest(path: &Path) -> Result<(Manifest, Vec<Reject>)> {
    let text = read_text(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = Manifest {
        root,
        entries: Vec::new(),
    };
    let mut rejects = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(e) => {
                rejects.push(Reject {
                    line: line_no,
                    image_path: String::new(),
                    reason: format!("malformed line: {e}"),
                });
                continue;
            }
        };
        let reject = |reason: String| Reject {
            line: line_no,
            image_path: entry.image_path.clone(),
            reason,
        };
        if !manifest.resolve(&entry.image_path).is_file() {
            rejects.push(reject("missing image file".into()));
            continue;
        }
        if !manifest.resolve(&entry.landmark_path).is_file() {
            rejects.push(reject("missing landmark file".into()));
            continue;
        }
        let key = (
            entry.subject_id.clone(),
            entry.video_id.clone(),
            entry.frame_index,
        );
        if !seen.insert(key) {
            rejects.push(reject("duplicate (subject, video, frame)".into()));
            continue;
        }
        manifest.entries.push(entry);
    }
    Ok((manifest, rejects))
}

/// Writes rejects as CSV with header `line,image_path,reason`.
pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["line", "image_path", "reason"])
        .map_err(|e| parse_err(path, e))?;
    for r in rejects {
        w.serialize(r).map_err(|e| parse_err(path, e))?;
    }
    write_file(path, w.into_inner().map_err(|e| parse_err(path, e))?)
}

/// Keeps entries whose frame index is a multiple of `stride`.
pub fn subsample_frames(manifest: &Manifest, stride: u64) -> Result<Manifest> {
    if stride == 0 {
        return Err(PipelineError::Config(
            "frame stride must be at least 1".into(),
        ));
    }
    Ok(manifest.with_entries(
        manifest
            .entries
            .iter()
            .filter(|e| e.frame_index % stride == 0)
            .cloned()
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_subjects: BTreeSet<String>,
    pub val_subjects: BTreeSet<String>,
    pub ratio: f64,
}

impl SplitSpec {
    pub fn is_train(&self, subject: &str) -> bool {
        self.train_subjects.contains(subject)
    }

    pub fn is_val(&self, subject: &str) -> bool {
        self.val_subjects.contains(subject)
    }
}

/// Shuffles subjects with `seed` and sends the first `ceil(ratio * n)` to
/// training.
pub fn split_by_subject(manifest: &Manifest, ratio: f64, seed: u64) -> Result<SplitSpec> {
    let mut subjects: Vec<String> = manifest.subjects().into_iter().collect();
    if subjects.len() < 2 {
        return Err(PipelineError::Config(format!(
            "subject split needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(PipelineError::Config(format!(
            "split ratio {ratio} outside (0, 1]"
        )));
    }
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * subjects.len() as f64) - 1e-9).ceil() as usize;
    let val: BTreeSet<String> = subjects
        .split_off(n_train.min(subjects.len()))
        .into_iter()
        .collect();
    if val.is_empty() {
        log::warn!("split ratio {ratio} leaves no validation subjects");
    }
    Ok(SplitSpec {
        train_subjects: subjects.into_iter().collect(),
        val_subjects: val,
        ratio,
    })
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_file(path, manifest.to_jsonl())
}

/// Creates the directory if needed.
pub(crate) fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}
