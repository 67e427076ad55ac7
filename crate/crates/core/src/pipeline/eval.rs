//! Pupil-localization evaluation against ground-truth pupil centers.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::manifest::Manifest;
use super::{parse_err, path_key, write_file, Result};
use crate::pupil::{
    jesorsky_error, locate_pupils, JesorskyInputs, JesorskySummary, JESORSKY_THRESHOLDS,
};
use crate::Point;

pub const JESORSKY_FILE: &str = "jesorsky.csv";
pub const PUPIL_SUMMARY_FILE: &str = "pupil_eval.json";

/// Ground-truth pupil centers keyed by image path; other columns are ignored.
#[derive(Debug, Clone, PartialEq, Deserialize)]
struct PupilTruth {
    image_path: String,
    left_x: f64,
    left_y: f64,
    right_x: f64,
    right_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PupilEvalSummary {
    pub jesorsky: JesorskySummary,
    pub evaluated: usize,
    /// Entries without ground truth or where localization failed.
    pub skipped: usize,
    pub mean_error: f64,
}

/// Scores every manifest entry that has ground truth and writes
/// `jesorsky.csv` and `pupil_eval.json` into `out_dir`.
pub fn eval_pupil(
    manifest: &Manifest,
    ground_truth: &Path,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<PupilEvalSummary> {
    let mut reader =
        csv::Reader::from_path(ground_truth).map_err(|e| parse_err(ground_truth, e))?;
    let truth_root = ground_truth.parent().unwrap_or(Path::new(""));
    let truth: HashMap<PathBuf, PupilTruth> = reader
        .deserialize::<PupilTruth>()
        .map(|r| r.map(|t| (path_key(truth_root, &t.image_path), t)))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(ground_truth, e))?;
    let sorted = manifest.sorted();
    let scored: Vec<Option<(String, f64)>> = sorted
        .entries
        .par_iter()
        .map(|e| {
            let t = truth.get(&path_key(&sorted.root, &e.image_path))?;
            let sample = sorted.load_sample(e).ok()?;
            let pair = locate_pupils(&sample, &cfg.pupil).ok()?;
            let inputs = JesorskyInputs::new(
                pair.centers(),
                (
                    Point::new(t.left_x, t.left_y),
                    Point::new(t.right_x, t.right_y),
                ),
            );
            let err = jesorsky_error(&inputs, cfg.pupil.jesorsky).ok()?;
            Some((e.image_path.clone(), err))
        })
        .collect();
    let scored: Vec<(String, f64)> = scored.into_iter().flatten().collect();
    let csv_path = out_dir.join(JESORSKY_FILE);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["sample_id".to_string(), "e".to_string()];
    header.extend(JESORSKY_THRESHOLDS.iter().map(|t| format!("hit@{t:.2}")));
    w.write_record(&header)
        .map_err(|e| parse_err(&csv_path, e))?;
    for (id, err) in &scored {
        let mut rec = vec![id.clone(), err.to_string()];
        rec.extend(
            JESORSKY_THRESHOLDS
                .iter()
                .map(|&t| u8::from(*err <= t).to_string()),
        );
        w.write_record(&rec).map_err(|e| parse_err(&csv_path, e))?;
    }
    write_file(
        &csv_path,
        w.into_inner().map_err(|e| parse_err(&csv_path, e))?,
    )?;
    let errors: Vec<f64> = scored.iter().map(|(_, e)| *e).collect();
    let summary = PupilEvalSummary {
        jesorsky: JesorskySummary::from_errors(&errors),
        evaluated: errors.len(),
        skipped: manifest.len() - errors.len(),
        mean_error: if errors.is_empty() {
            0.0
        } else {
            errors.iter().sum::<f64>() / errors.len() as f64
        },
    };
    write_file(
        &out_dir.join(PUPIL_SUMMARY_FILE),
        serde_json::to_string_pretty(&summary).expect("plain struct") + "\n",
    )?;
    Ok(summary)
}
