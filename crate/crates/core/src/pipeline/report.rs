//! SVG plots and a markdown summary built from whatever a run directory
//! contains.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::annotate::{AnnotationSummary, SUMMARY_FILE};
use super::eval::JESORSKY_FILE;
use super::runs::PRETEXT_LOG;
use super::{write_file, Result};
use crate::nnet::{Split, TrainLog};
use crate::pupil::JESORSKY_THRESHOLDS;

pub const REPORT_FILE: &str = "report.md";
pub const ERRORS_SUFFIX: &str = "_errors.csv";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportSummary {
    pub written: Vec<PathBuf>,
    pub missing: Vec<String>,
}

const W: f64 = 480.0;
const H: f64 = 300.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    (x0, x1, y0.min(0.0), y1)
}

fn svg_header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn axes(out: &mut String, x_label: &str, y_label: &str, (x0, x1, y0, y1): (f64, f64, f64, f64)) {
    let (left, right, top, bottom) = (MARGIN, W - 16.0, 32.0, H - MARGIN);
    writeln!(
        out,
        "<path d=\"M{left} {top} L{left} {bottom} L{right} {bottom}\" stroke=\"black\" fill=\"none\"/>"
    )
    .unwrap();
    for (v, y) in [(y0, bottom), (y1, top)] {
        writeln!(
            out,
            "<text x=\"{}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>",
            left - 4.0,
            y + 3.0,
            v
        )
        .unwrap();
    }
    for (v, x) in [(x0, left), (x1, right)] {
        writeln!(
            out,
            "<text x=\"{x:.1}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{v:.2}</text>",
            bottom + 14.0
        )
        .unwrap();
    }
    writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
        (left + right) / 2.0,
        H - 8.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        out,
        "<text x=\"12\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 12 {:.1})\">{}</text>",
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape(y_label)
    )
    .unwrap();
}

fn project((x0, x1, y0, y1): (f64, f64, f64, f64), x: f64, y: f64) -> (f64, f64) {
    let (left, right, top, bottom) = (MARGIN, W - 16.0, 32.0, H - MARGIN);
    (
        left + (x - x0) / (x1 - x0) * (right - left),
        bottom - (y - y0) / (y1 - y0) * (bottom - top),
    )
}

/// Line chart; every point is also drawn as a marker.
fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    marks: &[f64],
) -> String {
    let b = bounds(series);
    let mut out = svg_header(title);
    axes(&mut out, x_label, y_label, b);
    for &m in marks {
        let (x, top) = project(b, m, b.3);
        let (_, bottom) = project(b, m, b.2);
        writeln!(out, "<line class=\"mark\" x1=\"{x:.1}\" y1=\"{top:.1}\" x2=\"{x:.1}\" y2=\"{bottom:.1}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>").unwrap();
        writeln!(
            out,
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"10\" fill=\"gray\">{m:.2}</text>",
            top + 10.0
        )
        .unwrap();
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| {
                let (px, py) = project(b, x, y);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\"/>",
            path.join(" ")
        )
        .unwrap();
        for &(x, y) in &s.points {
            let (px, py) = project(b, x, y);
            writeln!(out, "<circle class=\"point\" cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"2.5\" fill=\"{color}\"/>").unwrap();
        }
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{}</text>",
            W - 110.0,
            40.0 + 14.0 * i as f64,
            escape(&s.name)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let mut out = svg_header(title);
    let max = bars.iter().map(|b| b.1).fold(0.0, f64::max).max(1.0);
    let (left, right, top, bottom) = (MARGIN, W - 16.0, 32.0, H - MARGIN);
    writeln!(out, "<path d=\"M{left} {top} L{left} {bottom} L{right} {bottom}\" stroke=\"black\" fill=\"none\"/>").unwrap();
    let slot = (right - left) / bars.len().max(1) as f64;
    for (i, (name, v)) in bars.iter().enumerate() {
        let h = v / max * (bottom - top);
        let x = left + slot * i as f64 + slot * 0.15;
        writeln!(
            out,
            "<rect class=\"bar\" x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{}\"/>",
            bottom - h,
            slot * 0.7,
            COLORS[i % COLORS.len()]
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            x + slot * 0.35,
            bottom + 14.0,
            escape(name)
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{v}</text>",
            x + slot * 0.35,
            bottom - h - 4.0
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Equal-width histogram of `values`.
fn histogram(values: &[f64], bins: usize) -> Vec<(String, f64)> {
    let max = values.iter().copied().fold(0.0, f64::max).max(1e-9);
    let width = max / bins as f64;
    let mut counts = vec![0.0; bins];
    for &v in values {
        counts[((v / width) as usize).min(bins - 1)] += 1.0;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (format!("{:.1}", (i as f64 + 0.5) * width), c))
        .collect()
}

fn read_column(path: &Path, column: &str) -> Option<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).ok()?;
    let idx = reader.headers().ok()?.iter().position(|h| h == column)?;
    reader
        .records()
        .map(|r| r.ok()?.get(idx)?.parse().ok())
        .collect()
}

/// Builds every plot whose inputs exist and a `report.md` listing results
/// and missing artifacts. Output depends only on the run files.
pub fn report(run_dir: &Path) -> Result<ReportSummary> {
    let mut summary = ReportSummary::default();
    let mut md = String::from("# Run report\n\n");
    let emit = |name: &str, svg: String, summary: &mut ReportSummary| -> Result<()> {
        let path = run_dir.join(name);
        write_file(&path, svg)?;
        summary.written.push(path);
        Ok(())
    };

    match std::fs::read_to_string(run_dir.join(PRETEXT_LOG))
        .ok()
        .and_then(|t| TrainLog::parse_csv(&t).ok())
    {
        Some(log) => {
            let series = |split: Split, loss: bool| Series {
                name: split.to_string(),
                points: log
                    .records
                    .iter()
                    .filter(|r| r.split == split)
                    .map(|r| (r.epoch as f64, if loss { r.loss } else { r.metric }))
                    .collect(),
            };
            emit(
                "loss.svg",
                line_chart(
                    "Pretext loss",
                    "epoch",
                    "cross-entropy",
                    &[series(Split::Train, true), series(Split::Val, true)],
                    &[],
                ),
                &mut summary,
            )?;
            emit(
                "accuracy.svg",
                line_chart(
                    "Pretext accuracy",
                    "epoch",
                    "accuracy",
                    &[series(Split::Train, false), series(Split::Val, false)],
                    &[],
                ),
                &mut summary,
            )?;
            let last = log.last(Split::Val).map_or(0.0, |r| r.metric);
            writeln!(md, "## Pretext training\n\nEpochs logged: {}. Final validation accuracy: {:.4}.\n\n![loss](loss.svg)\n![accuracy](accuracy.svg)\n", log.epochs_run(), last).unwrap();
        }
        None => summary.missing.push(PRETEXT_LOG.to_string()),
    }

    match std::fs::read_to_string(run_dir.join(SUMMARY_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<AnnotationSummary>(&t).ok())
    {
        Some(a) => {
            let c = &a.zone_counts;
            let bars = vec![
                ("left".to_string(), c.left as f64),
                ("right".to_string(), c.right as f64),
                ("center".to_string(), c.center as f64),
            ];
            emit(
                "zones.svg",
                bar_chart("Zone distribution (smoothed)", &bars),
                &mut summary,
            )?;
            writeln!(md, "## Annotation\n\nLabeled {} of {} entries ({} rejected). Zones: left {}, right {}, center {}.\n\n![zones](zones.svg)\n", a.labeled, a.manifest_entries, a.rejected, c.left, c.right, c.center).unwrap();
        }
        None => summary.missing.push(SUMMARY_FILE.to_string()),
    }

    match read_column(&run_dir.join(JESORSKY_FILE), "e") {
        Some(errors) if !errors.is_empty() => {
            let mut sorted = errors.clone();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len() as f64;
            let top = 0.3f64.max(JESORSKY_THRESHOLDS[2]);
            let steps = 60;
            let points = (0..=steps)
                .map(|i| {
                    let t = top * i as f64 / steps as f64;
                    (t, 100.0 * sorted.partition_point(|&e| e <= t) as f64 / n)
                })
                .collect();
            let curve = Series {
                name: "accuracy %".into(),
                points,
            };
            emit(
                "jesorsky.svg",
                line_chart(
                    "Pupil localization accuracy",
                    "normalized error e",
                    "% samples with error <= e",
                    &[curve],
                    &JESORSKY_THRESHOLDS,
                ),
                &mut summary,
            )?;
            md.push_str("## Pupil localization\n\n| threshold | accuracy % |\n|---|---|\n");
            for t in JESORSKY_THRESHOLDS {
                writeln!(
                    md,
                    "| {t:.2} | {:.2} |",
                    100.0 * sorted.partition_point(|&e| e <= t) as f64 / n
                )
                .unwrap();
            }
            md.push_str("\n![jesorsky](jesorsky.svg)\n\n");
        }
        _ => summary.missing.push(JESORSKY_FILE.to_string()),
    }

    let mut error_files: Vec<PathBuf> = std::fs::read_dir(run_dir)
        .map(|d| d.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    error_files.retain(|p| {
        p.file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(ERRORS_SUFFIX))
    });
    error_files.sort();
    if error_files.is_empty() {
        summary.missing.push(format!("*{ERRORS_SUFFIX}"));
    }
    for f in error_files {
        let stem = f
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .trim_end_matches(ERRORS_SUFFIX)
            .to_string();
        if let Some(errors) = read_column(&f, "error_deg").filter(|e| !e.is_empty()) {
            let name = format!("{stem}_angular.svg");
            emit(
                &name,
                bar_chart(
                    &format!("Angular error ({stem}), degrees"),
                    &histogram(&errors, 10),
                ),
                &mut summary,
            )?;
            let mean = errors.iter().sum::<f64>() / errors.len() as f64;
            writeln!(md, "## Angular error: {stem}\n\nMean {mean:.2} degrees over {} samples.\n\n![{stem}]({name})\n", errors.len()).unwrap();
        }
    }

    if !summary.missing.is_empty() {
        md.push_str("## Missing artifacts\n\n");
        for m in &summary.missing {
            writeln!(md, "- {m}").unwrap();
        }
    }
    let path = run_dir.join(REPORT_FILE);
    write_file(&path, md)?;
    summary.written.push(path);
    Ok(summary)
}
