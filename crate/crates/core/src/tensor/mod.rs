//! Dense `f64` tensors and a small reverse-mode autodiff graph.
//!
//! A [`Graph`] is built once from primitive operations and then evaluated any
//! number of times against different leaf bindings. [`Graph::forward`] keeps
//! every intermediate value so callers can read auxiliary outputs (for example
//! capsule presences) and run one or more backward passes from the same
//! forward evaluation.

mod graph;
mod ops;

pub use graph::{Bindings, Evaluation, Graph, LeafKind, NodeId};
pub(crate) use ops::sign;

use std::fmt;

use thiserror::Error;

/// Errors raised while building or evaluating tensors and graphs.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("leaf `{0}` is not bound")]
    UnboundLeaf(String),
    #[error("graph has no leaf named `{0}`")]
    UnknownLeaf(String),
    #[error("gradient requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error(
        "domain error at node {node} ({op}): operand {value} outside the open interval (-1, 1)"
    )]
    Domain {
        node: usize,
        op: &'static str,
        value: f64,
    },
    #[error("graph is empty")]
    EmptyGraph,
}

/// Row-major dense tensor of 64-bit floats.
///
/// A rank-0 tensor (empty shape) holds exactly one value and is the only
/// shape that broadcasts against others.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Rank-1 tensor over `data`.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a rank-0 (or one-element) tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshaped(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(shape, self.data)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::DataLength { len: 5, .. }));
    }

    #[test]
    fn scalar_has_empty_shape() {
        let s = Tensor::scalar(2.5);
        assert!(s.is_scalar());
        assert_eq!(s.len(), 1);
        assert_eq!(s.item(), 2.5);
    }

    #[test]
    fn l2_norm_of_three_four() {
        assert_eq!(Tensor::vector(vec![3.0, 4.0]).l2_norm(), 5.0);
    }
}

#[cfg(test)]
mod graph_tests;
