use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gazezone::nnet::Task;
use gazezone::pipeline::config::resolve_run_dir;
use gazezone::pipeline::manifest::{ingest, subsample_frames, write_manifest, write_rejects};
use gazezone::pipeline::{
    annotate, eval_pupil, gen_synthetic_corpus, report, run_adapt, run_pretext, AdaptMode,
    PipelineConfig,
};
use serde::Serialize;

/// Self-supervised gaze-zone pipeline: pseudo-labeling, pretext training and
/// downstream adaptation.
///
/// Relative output directories are placed under $GAZEZONE_RUN_ROOT when it
/// is set.
#[derive(Parser, Debug)]
#[command(name = "gazezone", version)]
struct Cli {
    /// TOML configuration; built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic face corpus with landmark sidecars and ground truth.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate a manifest and write the subsampled manifest and rejects.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pseudo-label every frame with gaze zone and head pose.
    Annotate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the pretext zone classifier on pseudo-labels.
    TrainPretext {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory produced by `annotate`.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt a pretext checkpoint to a downstream task.
    Adapt {
        #[arg(long)]
        manifest: PathBuf,
        /// CSV with `image_path` and `zone` or `gaze_x,gaze_y,gaze_z` columns.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// lp, ft or knn.
        #[arg(long)]
        mode: AdaptMode,
        /// zone or gaze3d.
        #[arg(long)]
        task: Task,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score pupil localization against ground-truth centers.
    EvalPupil {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render plots and a markdown summary from a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Print the effective configuration as TOML.
    PrintConfig,
}

fn print_stdout(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn emit<T: Serialize>(value: &T) -> Result<()> {
    print_stdout(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn load_manifest(path: &Path, cfg: &PipelineConfig) -> Result<gazezone::pipeline::Manifest> {
    let (manifest, rejects) =
        ingest(path).with_context(|| format!("reading manifest {}", path.display()))?;
    if !rejects.is_empty() {
        log::warn!("{} manifest entries rejected", rejects.len());
    }
    Ok(subsample_frames(&manifest, cfg.ingest.stride)?)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::GenSynth {
            out,
            subjects,
            videos,
            frames,
            seed,
        } => {
            let synth = &mut cfg.synth;
            synth.subjects = subjects.unwrap_or(synth.subjects);
            synth.videos_per_subject = videos.unwrap_or(synth.videos_per_subject);
            synth.frames_per_video = frames.unwrap_or(synth.frames_per_video);
            synth.seed = seed.unwrap_or(synth.seed);
            emit(&gen_synthetic_corpus(&cfg.synth, &resolve_run_dir(&out))?)
        }
        Command::Ingest { manifest, out } => {
            let out = resolve_run_dir(&out);
            let (parsed, rejects) = ingest(&manifest)?;
            let kept = subsample_frames(&parsed, cfg.ingest.stride)?;
            // Rewrite paths as absolute so the manifest is usable from `out`.
            let absolute = kept.with_entries(
                kept.entries
                    .iter()
                    .map(|e| {
                        let mut e = e.clone();
                        e.image_path = abs(&kept.resolve(&e.image_path));
                        e.landmark_path = abs(&kept.resolve(&e.landmark_path));
                        e
                    })
                    .collect(),
            );
            write_manifest(&out.join("manifest.jsonl"), &absolute)?;
            write_rejects(&out.join("ingest_rejects.csv"), &rejects)?;
            emit(&serde_json::json!({
                "entries": parsed.len(),
                "kept": kept.len(),
                "rejected": rejects.len(),
                "subjects": kept.subjects().len(),
            }))
        }
        Command::Annotate { manifest, out } => {
            let m = load_manifest(&manifest, &cfg)?;
            emit(&annotate(&m, &cfg, &resolve_run_dir(&out))?)
        }
        Command::TrainPretext {
            manifest,
            labels,
            out,
        } => emit(&run_pretext(
            &manifest,
            &resolve_run_dir(&labels),
            &cfg,
            &resolve_run_dir(&out),
        )?),
        Command::Adapt {
            manifest,
            labels,
            checkpoint,
            mode,
            task,
            out,
        } => {
            if mode == AdaptMode::Knn && task == Task::Gaze3d {
                bail!("k-NN probing supports the zone task only");
            }
            emit(&run_adapt(
                &manifest,
                &labels,
                &resolve_run_dir(&checkpoint),
                mode,
                task,
                &cfg,
                &resolve_run_dir(&out),
            )?)
        }
        Command::EvalPupil {
            manifest,
            ground_truth,
            out,
        } => {
            let m = load_manifest(&manifest, &cfg)?;
            emit(&eval_pupil(
                &m,
                &ground_truth,
                &cfg,
                &resolve_run_dir(&out),
            )?)
        }
        Command::Report { run } => emit(&report(&resolve_run_dir(&run))?),
        Command::PrintConfig => print_stdout(&cfg.to_toml()),
    }
}

fn abs(path: &Path) -> String {
    std::path::absolute(path)
        .unwrap_or_else(|_| path.to_path_buf())
        .to_string_lossy()
        .into_owned()
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(err) = run(Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
