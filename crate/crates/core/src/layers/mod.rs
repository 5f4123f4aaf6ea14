//! Embeddings, recurrent encoders, projections, and pairwise classifiers
//! built on the autodiff tape.

mod biaffine;
mod char_encoder;
mod dropout;
mod embedding;
mod linear;
mod lstm;
mod pretrained;

use thiserror::Error;

use crate::autodiff::TensorError;

pub use biaffine::BiaffineParams;
pub use char_encoder::{window_count, CharEncoder, CharDropout};
pub use dropout::{apply_dropout, drop_decisions, dropout_mask};
pub use embedding::EmbeddingTable;
pub use linear::{Fnn, Linear, Nonlinearity};
pub use lstm::{BiLstm, LstmDirection, LstmParams, LstmTrace};
pub use pretrained::{read_pretrained, Pretrained, PretrainedEmbedding, PretrainedWords, UnkRow};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("id {id} outside a table of {rows} rows")]
    IdOutOfRange { id: usize, rows: usize },
    #[error("{ids} ids but {mask} drop flags")]
    MaskLength { ids: usize, mask: usize },
    #[error("word {0} has no characters")]
    EmptyWord(usize),
    #[error("empty input sequence")]
    EmptySequence,
    #[error("{layer}: expected input width {expected}, got {actual}")]
    Dimension {
        layer: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("unknown nonlinearity `{0}`")]
    UnknownNonlinearity(String),
    #[error("pretrained embeddings, line {line}: {msg}")]
    PretrainedFormat { line: usize, msg: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LayerError>;

#[cfg(test)]
mod tests;
