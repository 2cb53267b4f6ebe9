use std::path::PathBuf;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension {0}: must be at least 2")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("model weights are already folded; refusing to fold twice")]
    AlreadyFolded,

    #[error("vocabulary file not found: {}", .0.display())]
    VocabMissing(PathBuf),

    #[error("unknown token id {0}")]
    UnknownToken(u32),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("sequence of length {len} exceeds context length {n_ctx}")]
    ContextTooLong { len: usize, n_ctx: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("demo assumption violated: {0}")]
    DemoAssumptionViolated(String),

    #[error("unknown graph node {0}")]
    UnknownNode(String),

    #[error("explanations were produced under different configs ({0} vs {1})")]
    ConfigMismatch(String, String),

    #[error("index cache is stale or unreadable: {0}")]
    StaleIndexCache(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
