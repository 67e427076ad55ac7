//! Dataset-wide pseudo-labeling with per-video temporal smoothing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::manifest::{write_rejects, Manifest, Reject};
use super::{parse_err, write_file, PipelineError, Result};
use crate::heuristic::{pseudo_label, smooth_labels, PseudoLabel, ZoneLabel};

pub const LABEL_DIR: &str = "labels";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REJECTS_FILE: &str = "rejects.csv";

/// One row of a per-video label CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub subject_id: String,
    pub video_id: String,
    pub frame_index: u64,
    pub image_path: String,
    pub zone: String,
    pub zone_smoothed: String,
    pub head_pose: String,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub theta4: f64,
    pub pupil_l_x: f64,
    pub pupil_l_y: f64,
    pub pupil_r_x: f64,
    pub pupil_r_y: f64,
    pub roll: f64,
    pub flags: String,
}

impl LabelRow {
    pub fn zone_label(&self, smoothed: bool) -> Option<ZoneLabel> {
        (if smoothed {
            &self.zone_smoothed
        } else {
            &self.zone
        })
        .parse()
        .ok()
    }

    pub fn roll_flagged(&self) -> bool {
        self.flags.split(';').any(|f| f == "roll_out_of_range")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneCounts {
    pub left: usize,
    pub right: usize,
    pub center: usize,
}

impl ZoneCounts {
    fn from_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Self {
        let mut c = ZoneCounts {
            left: 0,
            right: 0,
            center: 0,
        };
        for l in labels {
            match l {
                "left" => c.left += 1,
                "right" => c.right += 1,
                _ => c.center += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.left + self.right + self.center
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub manifest_entries: usize,
    pub labeled: usize,
    pub rejected: usize,
    pub videos: usize,
    pub zone_counts: ZoneCounts,
    pub zone_counts_unsmoothed: ZoneCounts,
    pub head_pose_counts: ZoneCounts,
    pub roll_flagged: usize,
    /// Reject reasons with their counts.
    pub reject_reasons: BTreeMap<String, usize>,
}

fn label_row(
    entry_image: &str,
    subject: &str,
    video: &str,
    frame: u64,
    l: &PseudoLabel,
) -> LabelRow {
    LabelRow {
        subject_id: subject.to_string(),
        video_id: video.to_string(),
        frame_index: frame,
        image_path: entry_image.to_string(),
        zone: l.zone.as_str().to_string(),
        zone_smoothed: l.zone.as_str().to_string(),
        head_pose: l.head_pose.as_str().to_string(),
        theta1: l.angles.theta1,
        theta2: l.angles.theta2,
        theta3: l.angles.theta3,
        theta4: l.angles.theta4,
        pupil_l_x: l.pupils.left.center.x,
        pupil_l_y: l.pupils.left.center.y,
        pupil_r_x: l.pupils.right.center.x,
        pupil_r_y: l.pupils.right.center.y,
        roll: l.roll_degrees,
        flags: l.flags.to_string(),
    }
}

fn csv_bytes<T: Serialize>(path: &Path, rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| parse_err(path, e))?;
    }
    w.into_inner().map_err(|e| parse_err(path, e))
}

/// File-system-safe name for a video's label CSV.
fn video_file_name(subject: &str, video: &str) -> String {
    let clean = |s: &str| {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect::<String>()
    };
    format!("{}__{}.csv", clean(subject), clean(video))
}

/// Labels every frame (in parallel), smooths zones per video, and writes
/// `labels/*.csv`, `summary.json` and `rejects.csv` into `out_dir`.
pub fn annotate(
    manifest: &Manifest,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<AnnotationSummary> {
    let sorted = manifest.sorted();
    let results: Vec<std::result::Result<LabelRow, String>> = sorted
        .entries
        .par_iter()
        .map(|e| {
            let sample = sorted.load_sample(e).map_err(|err| err.to_string())?;
            let label =
                pseudo_label(&sample, &cfg.pupil, &cfg.heuristic).map_err(|err| err.to_string())?;
            Ok(label_row(
                &e.image_path,
                &e.subject_id,
                &e.video_id,
                e.frame_index,
                &label,
            ))
        })
        .collect();

    let mut rejects = Vec::new();
    let mut videos: BTreeMap<(String, String), Vec<LabelRow>> = BTreeMap::new();
    for (entry, result) in sorted.entries.iter().zip(results) {
        match result {
            Ok(row) => videos
                .entry((row.subject_id.clone(), row.video_id.clone()))
                .or_default()
                .push(row),
            Err(reason) => rejects.push(Reject {
                line: 0,
                image_path: entry.image_path.clone(),
                reason,
            }),
        }
    }
    let mut reject_reasons = BTreeMap::new();
    for r in &rejects {
        *reject_reasons.entry(r.reason.clone()).or_insert(0) += 1;
    }
    write_rejects(&out_dir.join(REJECTS_FILE), &rejects)?;
    if videos.is_empty() {
        let reasons: Vec<String> = reject_reasons
            .iter()
            .map(|(r, n)| format!("{n} x {r}"))
            .collect();
        return Err(PipelineError::AllRejected(reasons.join("; ")));
    }

    let label_dir = out_dir.join(LABEL_DIR);
    if label_dir.exists() {
        std::fs::remove_dir_all(&label_dir).map_err(super::io_err(&label_dir))?;
    }
    let mut all_rows = Vec::new();
    for ((subject, video), mut rows) in videos.iter().map(|(k, v)| (k.clone(), v.clone())) {
        let zones: Vec<ZoneLabel> = rows
            .iter()
            .map(|r| r.zone_label(false).expect("written by us"))
            .collect();
        let smoothed = smooth_labels(&zones, cfg.heuristic.smoothing_window)?;
        for (row, z) in rows.iter_mut().zip(smoothed) {
            row.zone_smoothed = z.as_str().to_string();
        }
        let path = label_dir.join(video_file_name(&subject, &video));
        write_file(&path, csv_bytes(&path, &rows)?)?;
        all_rows.extend(rows);
    }

    let summary = AnnotationSummary {
        manifest_entries: manifest.len(),
        labeled: all_rows.len(),
        rejected: rejects.len(),
        videos: videos.len(),
        zone_counts: ZoneCounts::from_labels(all_rows.iter().map(|r| r.zone_smoothed.as_str())),
        zone_counts_unsmoothed: ZoneCounts::from_labels(all_rows.iter().map(|r| r.zone.as_str())),
        head_pose_counts: ZoneCounts::from_labels(all_rows.iter().map(|r| r.head_pose.as_str())),
        roll_flagged: all_rows.iter().filter(|r| r.roll_flagged()).count(),
        reject_reasons,
    };
    let json = serde_json::to_string_pretty(&summary).expect("plain struct") + "\n";
    write_file(&out_dir.join(SUMMARY_FILE), json)?;
    Ok(summary)
}

/// Reads every label CSV under `dir/labels`, in file-name order.
pub fn read_label_rows(dir: &Path) -> Result<Vec<LabelRow>> {
    let label_dir = dir.join(LABEL_DIR);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&label_dir)
        .map_err(super::io_err(&label_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut rows = Vec::new();
    for f in files {
        let mut reader = csv::Reader::from_path(&f).map_err(|e| parse_err(&f, e))?;
        for row in reader.deserialize() {
            rows.push(row.map_err(|e| parse_err(&f, e))?);
        }
    }
    Ok(rows)
}
