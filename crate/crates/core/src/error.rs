use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can surface. Variants are grouped by the
/// exit-code family they map to in the CLI (see [`Error::kind`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("malformed manifest {path}: {detail}")]
    MalformedManifest { path: PathBuf, detail: String },

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("unsupported png: {0}")]
    UnsupportedPng(String),

    #[error("value {value} out of range: {detail}")]
    ValueOutOfRange { value: String, detail: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },

    #[error("truncated file: expected {expected} bytes of payload, found {actual}")]
    TruncatedFile { expected: u64, actual: u64 },

    #[error("non-finite value at plane {plane}, index {index}")]
    NonFiniteValue { plane: usize, index: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("image-level label set is empty")]
    EmptyLabelSet,

    #[error("invalid configuration: {0}")]
    ConfigInvariantViolation(String),

    #[error("cannot decode image {path}: {detail}")]
    UndecodableImage { path: PathBuf, detail: String },

    #[error("missing feature file: {0}")]
    MissingFeatureFile(PathBuf),

    #[error("ignore pixels not allowed in an annotation")]
    AnnotationHasIgnorePixels,

    #[error("no scorable class: every class has a zero IoU denominator")]
    NoScorableClass,

    #[error("no pixels to evaluate")]
    NoPixels,

    #[error("missing annotations for sequences: {}", .0.join(", "))]
    MissingAnnotation(Vec<String>),

    #[error("no image has both a prediction and a ground-truth mask")]
    NoOverlap,

    #[error("workspace locked by another writer: {0}")]
    WorkspaceLocked(PathBuf),

    #[error("{failed} of {total} images failed in stage {stage}")]
    PartialFailure {
        stage: &'static str,
        failed: usize,
        total: usize,
    },
}

/// Coarse error family, used for exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Validation,
    Partial,
    MissingAnnotation,
    EmptyEvaluation,
    Locked,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::MissingFile(_) | Error::MissingFeatureFile(_) => ErrorKind::Io,
            Error::PartialFailure { .. } => ErrorKind::Partial,
            Error::MissingAnnotation(_) => ErrorKind::MissingAnnotation,
            Error::NoOverlap | Error::NoPixels => ErrorKind::EmptyEvaluation,
            Error::WorkspaceLocked(_) => ErrorKind::Locked,
            _ => ErrorKind::Validation,
        }
    }

    /// Stable machine-readable tag for the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingFile(_) => "missing_file",
            Error::MalformedManifest { .. } => "malformed_manifest",
            Error::InvariantViolation(_) => "invariant_violation",
            Error::UnsupportedPng(_) => "unsupported_png",
            Error::ValueOutOfRange { .. } => "value_out_of_range",
            Error::BadMagic { .. } => "bad_magic",
            Error::TruncatedFile { .. } => "truncated_file",
            Error::NonFiniteValue { .. } => "non_finite_value",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::EmptyLabelSet => "empty_label_set",
            Error::ConfigInvariantViolation(_) => "config_invariant_violation",
            Error::UndecodableImage { .. } => "undecodable_image",
            Error::MissingFeatureFile(_) => "missing_feature_file",
            Error::AnnotationHasIgnorePixels => "annotation_has_ignore_pixels",
            Error::NoScorableClass => "no_scorable_class",
            Error::NoPixels => "no_pixels",
            Error::MissingAnnotation(_) => "missing_annotation",
            Error::NoOverlap => "no_overlap",
            Error::WorkspaceLocked(_) => "workspace_locked",
            Error::PartialFailure { .. } => "partial_failure",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
