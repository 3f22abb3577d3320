use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input data or configuration (exit code 1).
    Validation,
    /// I/O or other environment failure (exit code 2).
    Runtime,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),

    #[error("bearing is undefined between coincident points")]
    UndefinedBearing,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("insufficient data for user {user}: {reason}")]
    InsufficientData { user: String, reason: String },

    #[error("invalid risk surface: {0}")]
    Surface(String),

    #[error("invalid lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },

    #[error("insufficient corpus: {docs} usable documents for {k} topics")]
    InsufficientCorpus { docs: usize, k: usize },

    #[error("collinear design: columns {0:?} are linearly dependent on earlier columns")]
    Collinear(Vec<String>),

    #[error("sample size error: {0}")]
    SampleSize(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("no users selected")]
    NoUsersSelected,

    #[error("missing upstream artifact {path}: run stage `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("malformed artifact {path}: {reason}")]
    Artifact { path: PathBuf, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Runtime,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
