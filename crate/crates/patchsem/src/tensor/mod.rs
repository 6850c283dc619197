//! Dense f64 tensors plus a recorded computation graph with reverse-mode
//! differentiation. The op set is exactly what the classifier's forward
//! pass needs; every op has a hand-written backward rule that is checked
//! against central finite differences in the test suite.

mod gradcheck;
mod graph;
#[cfg(test)]
mod tests;

pub use gradcheck::{finite_diff_check, finite_diff_errors};
pub use graph::{Graph, NodeId};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("conv kernel length must be odd, got {0}")]
    EvenKernel(usize),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("node does not belong to this graph")]
    DetachedTensor,
    #[error("data length {data_len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, data_len: usize },
}

/// Dense row-major array of f64 values, rank 1 to 3.
///
/// Rank-2 tensors carry almost all of the model: sequences are `[rows x
/// features]` and vectors are kept as single-row matrices. Rank-3 is used
/// only for convolution kernels `[k x d_in x d_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > 3 {
            return Err(TensorError::ShapeMismatch(format!(
                "rank must be 1..=3, got shape {shape:?}"
            )));
        }
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                data_len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    /// A `[1 x 1]` tensor holding a single value.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    /// A `[1 x n]` row vector.
    pub fn row(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values,
        }
    }

    /// A `[rows x cols]` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Tensor::new(vec![rows, cols], data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a rank-2 tensor (last axis for rank 1).
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }
}
