//! Dense f64 tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a shape-checked, heap-allocated value; [`Tape`] records a
//! computation as an arena of value slots plus an op list and replays it in
//! reverse to accumulate gradients. All arithmetic is 64-bit; every op
//! validates shapes up front and rejects non-finite results so failures
//! surface at the op that produced them.

mod adam;
mod blob;
mod tape;

pub use adam::AdamState;
pub use blob::{read_named_blob, write_named_blob, BlobEntry, BlobError, BLOB_SENTINEL};
pub use tape::{Tape, VarId};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: index {index} out of range for extent {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("backward target has {len} elements, expected a scalar")]
    NonScalarLoss { len: usize },
    #[error("{op}: length mismatch, expected {expected}, got {got}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: invalid argument: {message}")]
    InvalidArgument { op: &'static str, message: String },
}

fn shape_string(shape: &[usize]) -> String {
    let parts: Vec<String> = shape.iter().map(|e| e.to_string()).collect();
    format!("[{}]", parts.join("x"))
}

/// Dense row-major f64 tensor. Extents are strictly positive; values are
/// always finite once constructed through the checked constructors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    /// Present only on trainable tensors; same length as `values`.
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds an untracked tensor, validating extent positivity, the
    /// shape/value length product, and finiteness of every entry.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self, TensorError> {
        check_shape("Tensor::new", shape)?;
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(TensorError::LengthMismatch {
                op: "Tensor::new",
                expected: numel,
                got: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "Tensor::new" });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            values,
            grad: None,
        })
    }

    /// Like [`Tensor::new`] but with a gradient buffer attached (trainable).
    pub fn tracked(shape: &[usize], values: Vec<f64>) -> Result<Self, TensorError> {
        let mut t = Tensor::new(shape, values)?;
        t.grad = Some(vec![0.0; t.values.len()]);
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        check_shape("Tensor::zeros", shape)?;
        let numel: usize = shape.iter().product();
        Ok(Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; numel],
            grad: None,
        })
    }

    pub fn scalar(v: f64) -> Result<Self, TensorError> {
        Tensor::new(&[1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_tracked(&self) -> bool {
        self.grad.is_some()
    }

    /// Attaches (or keeps) a zeroed gradient buffer.
    pub fn track(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.values.len()]);
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Adds `delta` into the gradient buffer. The tensor must be tracked.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<(), TensorError> {
        let n = self.values.len();
        let g = self.grad.as_mut().ok_or(TensorError::InvalidArgument {
            op: "accumulate_grad",
            message: "tensor is not tracked".to_string(),
        })?;
        if delta.len() != n {
            return Err(TensorError::LengthMismatch {
                op: "accumulate_grad",
                expected: n,
                got: delta.len(),
            });
        }
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
        Ok(())
    }

    /// Applies one optimizer step to the values using the accumulated
    /// gradient. The tensor must be tracked.
    pub fn adam_update(&mut self, state: &mut AdamState) -> Result<(), TensorError> {
        let grad = self.grad.as_deref().ok_or(TensorError::InvalidArgument {
            op: "adam_update",
            message: "tensor is not tracked".to_string(),
        })?;
        state.update(&mut self.values, grad)
    }
}

fn check_shape(op: &'static str, shape: &[usize]) -> Result<(), TensorError> {
    if shape.is_empty() || shape.iter().any(|&e| e == 0) {
        return Err(TensorError::InvalidArgument {
            op,
            message: format!("extents must be positive, got {}", shape_string(shape)),
        });
    }
    Ok(())
}
