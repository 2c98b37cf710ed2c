use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("duplicate entity `{0}`")]
    DuplicateEntity(String),
    #[error("invalid entity `{id}`: {reason}")]
    InvalidEntity { id: String, reason: String },
    #[error("mention position {pos} out of bounds for sentence of {len} tokens")]
    PositionOutOfBounds { pos: usize, len: usize },
    #[error("textual edge needs two distinct mention positions, got {0} twice")]
    SamePosition(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("graph has {nodes} nodes, exceeding the enumeration cap of {cap}")]
    EnumerationCap { nodes: usize, cap: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training diverged: non-finite loss at batch {batch} (stage {stage})")]
    Divergence { stage: String, batch: usize },

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("{file}:{line}: {reason}")]
    Parse { file: String, line: usize, reason: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(file: impl Into<String>, line: usize, reason: impl Into<String>) -> Self {
        Error::Parse { file: file.into(), line, reason: reason.into() }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { key: key.into(), reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
