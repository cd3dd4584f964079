use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed {kind} file: {detail}")]
    Format { kind: &'static str, detail: String },
    #[error("bad IDX magic in {}: expected {expected:#010x}, found {found:#010x}", path.display())]
    IdxMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("truncated IDX payload in {}: expected {expected} bytes, found {found}", path.display())]
    IdxTruncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("IDX count mismatch: {images} images but {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("image has {got} pixels, expected {expected}")]
    PixelCount { expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("k-means needs at least {k} distinct points, got {distinct}")]
    TooFewPoints { k: usize, distinct: usize },
    #[error("cost matrix must be square with finite entries: {0}")]
    InvalidCost(String),
    #[error("no test sample is classified correctly by the target classifier")]
    NoCorrectSamples,
}

impl Error {
    /// I/O failure tagged with the path involved.
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(kind: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            kind,
            detail: detail.into(),
        }
    }
}
