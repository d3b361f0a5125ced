use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense 4-D tensor in `(batch, channels, height, width)` row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::shape(
                "tensor",
                format!("{n} elements for shape {shape:?}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor by evaluating `f(index)` for every flat index.
    pub fn from_fn(shape: [usize; 4], f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(f).collect(),
        }
    }

    /// Concatenates single-item tensors of identical shape along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items.first().ok_or(Error::Empty("stack"))?;
        let item_shape = [first.shape[1], first.shape[2], first.shape[3]];
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        let mut batch = 0;
        for t in items {
            if [t.shape[1], t.shape[2], t.shape[3]] != item_shape {
                return Err(Error::shape(
                    "stack",
                    format!("{item_shape:?}"),
                    format!("{:?}", t.shape),
                ));
            }
            batch += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: [batch, item_shape[0], item_shape[1], item_shape[2]],
            data,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of elements in one batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self, i: usize) -> &[T] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [T] {
        let n = self.item_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Copies batch item `i` out as a single-item tensor.
    pub fn select(&self, i: usize) -> Tensor<T> {
        Tensor {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.item(i).to_vec(),
        }
    }

    pub fn reshape(mut self, shape: [usize; 4]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?}", self.shape),
                format!("{shape:?}"),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.f64() * b.f64())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub(crate) fn expect_shape(&self, op: &'static str, shape: [usize; 4]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(
                op,
                format!("{shape:?}"),
                format!("{:?}", self.shape),
            ));
        }
        Ok(())
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}
