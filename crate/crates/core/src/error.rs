use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report. The variant name doubles as the
/// diagnostic printed by the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("InvalidVolume: {0}")]
    InvalidVolume(String),
    #[error("InvalidThreshold: {0} is not inside (0, 1)")]
    InvalidThreshold(f64),
    #[error("ShapeMismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: [usize; 3], right: [usize; 3] },
    #[error("WrongFormat: {0}")]
    WrongFormat(String),
    #[error("CorruptFile: {0}")]
    CorruptFile(String),
    #[error("PatchTooLarge: patch {patch} exceeds extent {length}")]
    PatchTooLarge { length: usize, patch: usize },
    #[error("InvalidSampling: {0}")]
    InvalidSampling(String),
    #[error("IncompleteCoverage: {uncovered} voxel(s) not covered, first at {first:?}")]
    IncompleteCoverage { uncovered: usize, first: [usize; 3] },
    #[error("NonDifferentiable: the Step activation has no usable derivative")]
    NonDifferentiable,
    #[error("DegenerateInput: {0}")]
    DegenerateInput(String),
    #[error("NoTrainingData")]
    NoTrainingData,
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("EmptyMask: {0}")]
    EmptyMask(String),
    #[error("EmptyReference")]
    EmptyReference,
    #[error("PlacementFailed: could not place lesion {lesion} after {attempts} attempts")]
    PlacementFailed { lesion: usize, attempts: usize },
    #[error("InvalidSplit: {0}")]
    InvalidSplit(String),
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("Parse: {0}")]
    Parse(String),
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidVolume(_) => "InvalidVolume",
            Error::InvalidThreshold(_) => "InvalidThreshold",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::WrongFormat(_) => "WrongFormat",
            Error::CorruptFile(_) => "CorruptFile",
            Error::PatchTooLarge { .. } => "PatchTooLarge",
            Error::InvalidSampling(_) => "InvalidSampling",
            Error::IncompleteCoverage { .. } => "IncompleteCoverage",
            Error::NonDifferentiable => "NonDifferentiable",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::NoTrainingData => "NoTrainingData",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::EmptyMask(_) => "EmptyMask",
            Error::EmptyReference => "EmptyReference",
            Error::PlacementFailed { .. } => "PlacementFailed",
            Error::InvalidSplit(_) => "InvalidSplit",
            Error::Io { .. } => "Io",
            Error::Parse(_) => "Parse",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
