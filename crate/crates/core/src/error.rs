use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("not a probability distribution (sum {sum}, min {min})")]
    NotADistribution { sum: f64, min: f64 },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("attention layer used in {actual} mode where {expected} mode is required")]
    ModeMismatch {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("{0} must be non-negative")]
    NegativeInput(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("policy output mismatch: {0}")]
    PolicyOutput(String),
    #[error("missing {0}")]
    Missing(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("rollout {rollout}: {source}")]
    Rollout {
        rollout: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("plot: {0}")]
    Plot(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
