//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is built per sentence on top of a borrowed [`ParameterStore`];
//! [`Graph::backward`] returns the parameter gradients, which are folded into
//! the store with [`ParameterStore::accumulate`] and consumed by [`Adam`].

mod adam;
mod graph;
mod store;
mod tensor;

pub use adam::Adam;
pub use graph::{log_sum_exp, Gradients, Graph, NodeId};
pub use store::{Init, ParamId, Parameter, ParameterStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{0}: no operands")]
    EmptyOperands(&'static str),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        AutodiffError::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
