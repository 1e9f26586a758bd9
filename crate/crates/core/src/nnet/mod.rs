//! Minimal tensor engine with reverse-mode differentiation and the layers
//! used by the classifiers: embedding, 1D convolution, pooling, GRU
//! (including the bidirectional wrapper), LSTM, dense, dropout and sigmoid.

pub mod fpmode;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use fpmode::FlushDenormals;
pub use gradcheck::{grad_check, GradCheckReport, Objective, TapeObjective};
pub use layers::{
    bidirectional_gru, concat_cols, conv1d_forward, dense_forward, dropout, embedding_forward,
    gru_sequence, gru_step, lstm_sequence, lstm_step, pool, sigmoid, Activation, DropoutMode,
    GruParams, LstmParams, PoolMode,
};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{bce, NodeId, RecurrentNodes, Tape, BCE_EPSILON};
pub use tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("token index {index} out of range for vocabulary of {vocab}")]
    IndexOutOfRange { index: usize, vocab: usize },
    #[error("kernel width {kernel} exceeds sequence length {len}")]
    KernelTooLong { kernel: usize, len: usize },
    #[error("pool window {window} invalid for sequence length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}
