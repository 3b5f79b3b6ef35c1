use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("self-loop on `{0}`")]
    SelfLoop(String),

    #[error("relation {relation} does not admit ({head_class}, {tail_class}) for `{head}` -> `{tail}`")]
    EndpointMismatch {
        relation: String,
        head: String,
        tail: String,
        head_class: String,
        tail_class: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("similarity undefined for zero-norm vector")]
    ZeroNorm,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("negative sampling exhausted: {0}")]
    SamplingExhausted(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("entity `{0}` has no neighbours")]
    EmptyNeighborhood(String),

    #[error("no admissible path from `{0}`")]
    NoPath(String),

    #[error("unsupported or corrupt file: {0}")]
    Version(String),

    #[error("unknown candidate `{0}`")]
    UnknownCandidate(String),

    #[error("reviewer `{reviewer}` already voted on `{candidate}`")]
    DuplicateVerdict { candidate: String, reviewer: String },

    #[error("candidate `{0}` is already decided")]
    AlreadyDecided(String),

    #[error("unknown run `{0}`")]
    UnknownRun(String),

    #[error("unknown mode `{0}`")]
    UnknownMode(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }
}
