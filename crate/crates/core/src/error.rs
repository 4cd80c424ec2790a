use std::path::PathBuf;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid world config: {0}")]
    InvalidWorldConfig(String),
    #[error("no path with {0} nodes exists in this world")]
    NoPathOfLength(usize),
    #[error("node {0} is not in the graph")]
    UnknownNode(usize),
    #[error("action index {index} out of range for {count} candidates")]
    ActionOutOfRange { index: usize, count: usize },
    #[error("nodes {0} and {1} are not adjacent")]
    NotAdjacent(usize, usize),
    #[error("invalid episode: {0}")]
    InvalidEpisode(String),
    #[error("empty phrase")]
    EmptyPhrase,
    #[error("empty instruction")]
    EmptyInstruction,
    #[error("instruction has {len} tokens, model supports at most {max}")]
    InstructionTooLong { len: usize, max: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label '{0}' is not in the vocabulary")]
    UnknownLabel(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("attention row {0} has every key masked")]
    AllMasked(usize),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("no valid prompt pairs in batch")]
    NoValidPairs,
    #[error("training diverged at iteration {iter} ({pass} pass): {detail}")]
    Divergence {
        iter: usize,
        pass: String,
        detail: String,
    },
    #[error("non-finite gradient for parameter '{0}'")]
    NonFiniteGradient(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-parsable category, used by the command line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidWorldConfig(_) | Error::Config(_) => "config",
            Error::MissingFile(_) => "missing_file",
            Error::Io { .. } => "io",
            Error::Json(_) | Error::Format { .. } => "schema",
            Error::CheckpointMismatch(_) => "checkpoint_mismatch",
            Error::Divergence { .. } | Error::NonFiniteGradient(_) => "divergence",
            _ => "invalid_input",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl ToString) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
