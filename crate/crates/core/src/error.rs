use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("variable #{index} does not belong to this tape")]
    NotOnTape { index: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("invalid priority weights alpha={alpha}, beta={beta}: need alpha+beta=1, both > 0")]
    InvalidWeights { alpha: f64, beta: f64 },

    #[error("not a permutation of 0..{len}: {detail}")]
    InvalidPermutation { len: usize, detail: String },

    #[error("length mismatch in {what}: expected {expected}, got {actual}")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("malformed {what} at byte offset {offset}: {detail}")]
    Format {
        what: &'static str,
        offset: u64,
        detail: String,
    },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("scheme {scheme} needs a {model} which was not supplied")]
    MissingModel { scheme: &'static str, model: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
