//! A small reverse-mode differentiation engine in f64.
//!
//! Everything the agents learn with lives here: the tape, the GRU cell,
//! sequence encoding, Adam, parameter sets, and checkpoints. There is no
//! threading and no implicit global state; forward evaluation of the same
//! inputs with the same parameters is bit-identical.

mod adam;
mod check;
mod nn;
mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use check::{central_difference, max_rel_err};
pub use nn::{encode_sequence, Gru, GruBound, Init};
pub use params::{load_checkpoint, save_checkpoint, ParamSet};
pub use tape::{Gradients, Tape, ValueId, LOG_FLOOR};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("token id {id} is outside the vocabulary of size {vocab_size}")]
    OutOfVocab { id: usize, vocab_size: usize },
    #[error("parameter '{name}' already exists")]
    DuplicateParam { name: String },
    #[error("unknown parameter '{name}'")]
    UnknownParam { name: String },
    #[error("checkpoint tensor '{name}': {detail}")]
    CheckpointMismatch { name: String, detail: String },
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}
