//! Wire formats: LSCE embedding files, JSON manifests, prediction files and
//! reports.

pub mod manifest;
pub mod tensor;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::embedding::Stage;
use crate::stats::EvalReport;

pub use manifest::{load_dataset, write_dataset, Dataset, DatasetContents, Manifest};
pub use tensor::{ParseError, ParseReason};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{}: file not found (referenced by {})", path.display(), referenced_by.display())]
    MissingFile { path: PathBuf, referenced_by: PathBuf },
    #[error("{}: malformed JSON: {message}", path.display())]
    Json { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: ParseError },
    #[error(
        "{}: record `{image_id}` at byte {offset} has dim {header_dim}, manifest declares {manifest_dim}",
        path.display()
    )]
    DimMismatch {
        path: PathBuf,
        offset: usize,
        image_id: String,
        manifest_dim: usize,
        header_dim: usize,
    },
    #[error("{}: duplicate {kind} id `{id}`", path.display())]
    DuplicateId { path: PathBuf, kind: &'static str, id: String },
    #[error("sample `{sample_id}` references image `{image_id}` with no {stage} embedding")]
    UnresolvedReference { sample_id: String, image_id: String, stage: Stage },
    #[error("{}: {message}", path.display())]
    InvalidManifest { path: PathBuf, message: String },
}

impl IoError {
    /// True for content that was read but is inconsistent, as opposed to
    /// unreadable or malformed input.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::DimMismatch { .. } | Self::DuplicateId { .. } | Self::UnresolvedReference { .. } | Self::InvalidManifest { .. }
        )
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IoError::MissingFile {
                path: path.to_owned(),
                referenced_by: PathBuf::from("command line"),
            }
        } else {
            IoError::Io {
                path: path.to_owned(),
                message: e.to_string(),
            }
        }
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    manifest::pretty_json(value)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport, IoError> {
    let path = path.as_ref();
    serde_json::from_slice(&read_file(path)?).map_err(|e| IoError::Json {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Writes `text` to `path`, or to standard output for `-`.
pub fn write_output(path: &Path, text: &str) -> Result<(), IoError> {
    if path == Path::new("-") {
        use std::io::Write;
        let mut out = std::io::stdout().lock();
        return out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| IoError::Io {
            path: path.to_owned(),
            message: e.to_string(),
        });
    }
    fs::write(path, text).map_err(|e| IoError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    })
}
