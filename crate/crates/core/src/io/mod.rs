//! Model files and result records.

mod native;
mod records;
mod uai;

use thiserror::Error;

use crate::model::ModelError;

pub use native::{read_native, write_native, NativeModel, NATIVE_FORMAT, NATIVE_VERSION};
pub use records::{write_jsonl, write_trace};
pub use uai::{parse_uai, UaiOptions};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("line {line}, column {column}: clique of arity {arity}; only unary and pairwise cliques are supported")]
    Arity { line: usize, column: usize, arity: usize },
    #[error("line {line}, column {column}: table has {found} entries, expected {expected}")]
    TableLength { line: usize, column: usize, expected: usize, found: usize },
    #[error("unexpected end of input while reading {0}")]
    UnexpectedEof(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("native model: {0}")]
    Json(#[from] serde_json::Error),
    #[error("native model: {0}")]
    Format(String),
}
