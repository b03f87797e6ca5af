use std::io;

use thiserror::Error;

/// Errors produced anywhere in the alignment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line count mismatch: {left} has {left_lines} lines, {right} has {right_lines}")]
    LineCountMismatch {
        left: String,
        left_lines: usize,
        right: String,
        right_lines: usize,
    },

    #[error("{file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("malformed alignment token `{token}`: {reason}")]
    Pharaoh { token: String, reason: String },

    #[error("alignment link ({i}, {j}) out of bounds for a {n}x{m} sentence pair")]
    OutOfBounds { i: usize, j: usize, n: usize, m: usize },

    #[error("vocabulary target size {target} is below the minimum {minimum} (alphabet plus specials)")]
    VocabTooSmall { target: usize, minimum: usize },

    #[error("malformed vocabulary: {0}")]
    Vocab(String),

    #[error("cannot detokenize: unknown token at position {position}")]
    UnknownToken { position: usize },

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("word index {index} out of range for a {len}-word sentence")]
    WordIndex { index: usize, len: usize },

    #[error("sequence length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },

    #[error("{direction} query for word {word}: {source}")]
    Query {
        direction: &'static str,
        word: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("sentence pair {0} has no gold alignment")]
    MissingGold(usize),

    #[error("{0} is undefined for this input")]
    Undefined(&'static str),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
