use thiserror::Error;

/// Failures raised by a [`TokenScorer`](crate::scoring::TokenScorer).
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScorerError {
    #[error("sequence not present in fixture table: {0:?}")]
    UnknownSequence(Vec<String>),

    #[error("token {0:?} missing from unigram table")]
    UnknownToken(String),

    #[error("scorer returned {got} scores for {expected} tokens")]
    LengthMismatch { expected: usize, got: usize },

    #[error("scorer returned invalid NLL {value} at position {position}")]
    InvalidValue { position: usize, value: f64 },

    #[error("scorer returned {got} vectors for a batch of {expected}")]
    BatchMismatch { expected: usize, got: usize },

    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },

    #[error("protocol violation for sentence {index}: {message}")]
    Protocol { index: usize, message: String },

    #[error("malformed response body: {0}")]
    MalformedBody(String),

    #[error("server rejected request ({status}): {message}")]
    Rejected { status: u16, message: String },

    #[error("incompatible protocol version {got} (expected {expected})")]
    IncompatibleVersion { expected: u32, got: u32 },

    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("sentence has no tokens")]
    EmptySentence,

    #[error("token {index} ({token:?}) is empty or contains whitespace")]
    InvalidToken { index: usize, token: String },

    #[error("frozen token {0:?} does not occur in the sentence")]
    FrozenNotFound(String),

    #[error("frozen index {index} out of range for a {len}-token sentence")]
    FrozenOutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scoring {tokens:?} failed: {source}")]
    Scorer {
        tokens: Vec<String>,
        #[source]
        source: ScorerError,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("record {record}: missing field `{field}`")]
    SchemaMismatch { record: usize, field: String },

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
