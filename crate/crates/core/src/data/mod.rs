//! Sentences, semantic graphs, the SDP file format, vocabularies, and batching.

mod batch;
mod graph;
pub mod sdp;
mod vocab;

pub use batch::{batch_by_tokens, batch_lengths, Batch, BatchError, DEFAULT_TOKEN_BUDGET};
pub use graph::{Edge, GraphError, SemanticGraph, Token};
pub use sdp::{read_sdp, read_sdp_str, write_sdp, write_sdp_string, SdpError};
pub use vocab::{
    SymbolTable, VocabError, Vocabulary, BOUNDARY_INDEX, DEFAULT_MIN_COUNT, DROP_INDEX,
    TOP_LABEL, TOP_LABEL_INDEX, UNK_INDEX,
};
