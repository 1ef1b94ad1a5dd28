//! Error type shared by every module of the crate.

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage of [`crate::metric::remove_score`] an error originated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Crop,
    Preprocess,
    Encode,
    MaskDownsample,
    Segregate,
    Mean,
    Similarity,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Crop => "crop",
            Stage::Preprocess => "preprocess",
            Stage::Encode => "encode",
            Stage::MaskDownsample => "mask-downsample",
            Stage::Segregate => "segregate",
            Stage::Mean => "mean",
            Stage::Similarity => "similarity",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// The mask selects nothing or everything at the resolution it is used at.
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("zero-norm feature vector: {0}")]
    ZeroVector(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("encoder `{encoder_id}` failed: {message}")]
    EncoderFailure { encoder_id: String, message: String },

    /// An external artifact (weights, backend executable) could not be loaded.
    #[error("cannot load {artifact}: {reason}")]
    Load { artifact: String, reason: String },

    #[error("adapter contract violation: {0}")]
    ContractViolation(String),

    #[error("reference image required: {0}")]
    ReferenceRequired(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at(self, stage: Stage) -> Self {
        match self {
            // keep the innermost stage label
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The error with any stage label stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    pub fn is_degenerate_mask(&self) -> bool {
        matches!(self.root(), Error::DegenerateMask(_))
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
