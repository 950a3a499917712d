//! Minimal reverse-mode differentiation over dense `[N, C, H, W]` tensors.
//!
//! Only the operators the representation and restoration networks need are
//! provided. Each one has a hand-written backward pass that the test suite
//! checks against central finite differences in `f64`.

mod conv;
pub mod gradcheck;
mod graph;
pub mod layers;
mod loss;
mod norm;
mod params;
mod tensor;

use alloc::string::String;
use alloc::vec::Vec;

pub use conv::{col2im, conv_out_size, im2col};
pub use graph::{Graph, Var};
pub use layers::{Conv2d, DsLayerNorm, Gate, LayerNorm, Linear};
pub use params::{Init, ParamId, ParamStore};
pub use tensor::Tensor;

/// Normalization epsilon shared by every layer norm.
pub const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("{op}: expected shape {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got {got}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: channel mismatch, expected {expected}, got {got}")]
    Channels {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("duplicate parameter {0}")]
    DuplicateParam(String),
}

impl NnError {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        NnError::Invalid {
            op,
            msg: msg.into(),
        }
    }
}
