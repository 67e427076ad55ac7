//! Dataset plumbing and orchestration: manifests, frame subsampling,
//! subject-wise splits, the synthetic corpus generator, dataset-wide
//! annotation, training/evaluation runs and reports.

pub mod annotate;
pub mod config;
pub mod eval;
pub mod manifest;
pub mod report;
pub mod runs;
pub mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use annotate::{annotate, read_label_rows, AnnotationSummary, LabelRow};
pub use config::{PipelineConfig, RUN_ROOT_ENV};
pub use eval::{eval_pupil, PupilEvalSummary};
pub use manifest::{
    ingest, split_by_subject, subsample_frames, Manifest, ManifestEntry, Reject, SplitSpec,
};
pub use report::{report, ReportSummary};
pub use runs::{run_adapt, run_pretext, AdaptMode, AdaptRunSummary, PretextRunSummary};
pub use synth::{
    gen_synthetic_corpus, render_face, CorpusSummary, RenderedFace, SubjectLook, SynthConfig,
    SyntheticFaceSpec,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("every entry was rejected: {0}")]
    AllRejected(String),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error(transparent)]
    Landmarks(#[from] crate::landmarks::LandmarkError),
    #[error(transparent)]
    Heuristic(#[from] crate::heuristic::HeuristicError),
    #[error(transparent)]
    Pupil(#[from] crate::pupil::PupilError),
    #[error(transparent)]
    Nnet(#[from] crate::nnet::NnetError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn parse_err(path: &Path, message: impl ToString) -> PipelineError {
    PipelineError::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Canonical form of `path` relative to `root`, used to join files listed in
/// different manifests or label tables.
pub(crate) fn path_key(root: &Path, path: &str) -> PathBuf {
    let joined = root.join(path);
    std::fs::canonicalize(&joined)
        .or_else(|_| std::path::absolute(&joined))
        .unwrap_or(joined)
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}
