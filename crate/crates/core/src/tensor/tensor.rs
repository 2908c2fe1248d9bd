use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Shape-tagged row-major array, optionally carrying a gradient buffer.
///
/// Rows listed in `frozen_rows` never receive gradient: accumulation zeroes
/// them and optimizers skip them. This is how the PAD embedding rows stay at
/// zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Arc<Vec<T>>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    frozen_rows: Vec<usize>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor shape must be non-empty with positive dimensions, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::dims("Tensor::new", &shape, &[values.len()]));
        }
        Ok(Self {
            shape,
            values: Arc::new(values),
            requires_grad: false,
            grad: None,
            frozen_rows: Vec::new(),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![T::zero(); n]).expect("valid zero shape")
    }

    pub fn scalar(x: T) -> Self {
        Self::new(vec![1], vec![x]).expect("scalar shape")
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(Error::dims("Tensor::from_rows", &[r, c], &[bad.len()]));
        }
        Self::new(vec![r, c], rows.iter().flatten().copied().collect())
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::lit(v)).collect())
    }

    /// Marks the tensor as trainable and allocates a zeroed gradient buffer.
    pub fn with_grad(mut self) -> Self {
        self.set_requires_grad(true);
        self
    }

    pub fn with_frozen_rows(mut self, rows: Vec<usize>) -> Self {
        self.frozen_rows = rows;
        self
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        self.grad = on.then(|| vec![T::zero(); self.values.len()]);
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Leading dimension; 1 for a 1-D tensor.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[0]
        }
    }

    /// Product of the trailing dimensions (the full length for 1-D).
    pub fn cols(&self) -> usize {
        self.len() / self.rows()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub(crate) fn shared_values(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.values)
    }

    /// Mutable access, copying the storage first if a graph still shares it.
    pub fn values_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.values).as_mut_slice()
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.cols() + col]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    pub fn frozen_rows(&self) -> &[usize] {
        &self.frozen_rows
    }

    pub fn is_frozen_row(&self, r: usize) -> bool {
        self.frozen_rows.contains(&r)
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// `grad += delta`, leaving frozen rows at zero.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<()> {
        let cols = self.cols();
        let frozen = &self.frozen_rows;
        let Some(g) = self.grad.as_mut() else {
            return Ok(());
        };
        if delta.len() != g.len() {
            return Err(Error::dims("accumulate_grad", &[g.len()], &[delta.len()]));
        }
        for (i, (acc, d)) in g.iter_mut().zip(delta).enumerate() {
            if !frozen.contains(&(i / cols)) {
                *acc += *d;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite()) && self.grad.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Element-wise conversion to another scalar type.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            values: Arc::new(self.values.iter().map(|v| U::lit(v.as_f64())).collect()),
            requires_grad: self.requires_grad,
            grad: self.grad.as_ref().map(|g| g.iter().map(|v| U::lit(v.as_f64())).collect()),
            frozen_rows: self.frozen_rows.clone(),
        }
    }
}
