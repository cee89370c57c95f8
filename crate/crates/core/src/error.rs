use std::path::PathBuf;

/// Errors raised across the workbench.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("computation graph already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("episode is over; call reset before stepping again")]
    EpisodeOver,

    #[error("profile grid mismatch: {0}")]
    GridMismatch(String),

    #[error("parse error in {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error("unknown experiment id `{0}`")]
    UnknownExperiment(String),

    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),

    #[error("no tuned configuration for {algorithm} in {experiment}")]
    MissingTunedConfig { algorithm: String, experiment: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("threshold table inconsistent: {0}")]
    InconsistentThreshold(String),

    #[error("run diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse { what: what.into(), detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
