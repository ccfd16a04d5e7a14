use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("schema violation in {file}: {message}")]
    SchemaViolation { file: String, message: String },

    #[error("dangling reference: {0}")]
    DanglingReference(String),

    #[error("fixations not sorted by onset in session ({participant}, {page})")]
    UnsortedInput { participant: String, page: String },

    #[error("cannot parse attribute `{attr}` = {value:?}")]
    UnparsableAttribute { attr: String, value: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("row count mismatch: {left} vs {right}")]
    RowCountMismatch { left: usize, right: usize },

    #[error("{which} covariance is singular (smallest eigenvalue {min_eig:e}); use lambda > 0")]
    SingularCovariance { which: &'static str, min_eig: f64 },

    #[error("subspace dimension {d} exceeds limit {max}")]
    DimensionTooLarge { d: usize, max: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("retrieval index is empty")]
    EmptyIndex,

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("text cost must be positive")]
    ZeroTextCost,

    #[error("bandwidth must be positive")]
    ZeroBandwidth,

    #[error("cannot read raster {}: {reason}", path.display())]
    UnreadableRaster { path: PathBuf, reason: String },

    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad binary format in {context}: {message}")]
    Format { context: String, message: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn schema(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::SchemaViolation {
            file: file.into(),
            message: message.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for errors caused by bad input rather than a bug or environment fault.
    pub fn is_user_error(&self) -> bool {
        self.exit_code() == 1
    }

    /// Process exit code: 1 for user errors, 2 for internal ones.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => 2,
            _ => 1,
        }
    }
}
