use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("permutation is not a bijection onto [0:{n}): {image:?}")]
    NotBijective { n: usize, image: Vec<usize> },

    #[error("integer overflow computing {0}")]
    Overflow(String),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("malformed answers: {0}")]
    MalformedAnswers(String),

    #[error("{what} too large: {size} exceeds cap {cap}")]
    TooLarge {
        what: &'static str,
        size: u64,
        cap: u64,
    },

    #[error("allocation for message {k} is not normalized (residual {residual:e})")]
    NotNormalized { k: usize, residual: f64 },

    #[error("allocation for message {k} has negative mass on key {key}")]
    NegativeProbability { k: usize, key: String },

    #[error("allocation infeasible: {0}")]
    Infeasible(String),

    #[error("download cost {d} outside [1, {max}]")]
    OutOfRange { d: f64, max: f64 },

    #[error("solver did not converge after {iterations} iterations ({detail})")]
    NotConverged { iterations: usize, detail: String },

    #[error("no sign change found while bracketing: {0}")]
    NoBracket(String),

    #[error("degenerate parameters: {0}")]
    Degenerate(String),

    #[error("certificate failed: {}", .0.join("; "))]
    CertificateFailed(Vec<String>),

    #[error("decoded message differs from the stored message {k}")]
    DecodeMismatch { k: usize },

    #[error("invalid store file: {0}")]
    StoreFormat(String),

    #[error("connection to {endpoint} failed: {source}")]
    ConnectionFailed {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },

    #[error("timed out waiting for {endpoint}")]
    Timeout { endpoint: String },

    #[error("answer from {endpoint} has {got} symbols, expected {expected}")]
    AnswerLengthMismatch {
        endpoint: String,
        expected: usize,
        got: usize,
    },

    #[error("server {endpoint} replied with error code {code:#04x}")]
    ServerError { endpoint: String, code: u8 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
