use thiserror::Error;

/// Errors surfaced by the numeric and data layers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("p must be odd and at least 3, got {0}")]
    BadModulus(usize),
    #[error("vector length {got} does not match p = {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{what} out of range: {got} not in [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        got: usize,
        lo: usize,
        hi: usize,
    },
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("answer {answer} for {a} and {b} exceeds the number vocabulary (max {max})")]
    AnswerExceedsVocab {
        a: u32,
        b: u32,
        answer: u64,
        max: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown token '{0}'")]
    UnknownToken(String),
    #[error("token id {0} out of vocabulary")]
    UnknownTokenId(u32),
    #[error("sequence length {got} exceeds max_seq_len {max}")]
    SequenceTooLong { got: usize, max: usize },
    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: u64 },
    #[error("config invalid: {0}")]
    BadConfig(String),
    #[error("checkpoint malformed: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
