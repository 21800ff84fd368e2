use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor. Network tensors are 5D `[N, C, D, H, W]`; 2D
/// feature maps use `D = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Gradient filled in by training and gradient checks.
    #[serde(skip)]
    pub grad: Option<Vec<T>>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::ZERO; numel(shape)], grad: None }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; numel(shape)], grad: None }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return dim_err(format!("shape {:?} needs {} values, got {}", shape, numel(shape), data.len()));
        }
        Ok(Tensor { shape: shape.to_vec(), data, grad: None })
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![1], data: vec![v], grad: None }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if numel(&self.shape) != self.data.len() {
            return dim_err("tensor data length does not match its shape");
        }
        if let Some(g) = &self.grad {
            if g.len() != self.data.len() {
                return dim_err("tensor gradient length does not match its shape");
            }
        }
        Ok(())
    }

    /// Dims as `[N, C, D, H, W]`.
    pub fn dims5(&self) -> Result<[usize; 5]> {
        dims5(&self.shape)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(|v| U::from_f64(v.to_f64())).collect()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Batch item `n` of a tensor whose first axis is the batch.
    pub fn item(&self, n: usize) -> Tensor<T> {
        let per = numel(&self.shape[1..]);
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor { shape, data: self.data[n * per..(n + 1) * per].to_vec(), grad: None }
    }

    /// Stacks single-item tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items.first().ok_or_else(|| crate::Error::Empty("nothing to stack".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape[1..] != first.shape[1..] || t.shape[0] != 1 {
                return dim_err("stacked tensors must share a unit-batch shape");
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = items.len();
        Ok(Tensor { shape, data, grad: None })
    }
}

pub fn dims5(shape: &[usize]) -> Result<[usize; 5]> {
    match shape {
        [n, c, d, h, w] => Ok([*n, *c, *d, *h, *w]),
        _ => dim_err(format!("expected a 5D tensor, got shape {shape:?}")),
    }
}
