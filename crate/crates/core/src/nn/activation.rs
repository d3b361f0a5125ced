use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `x` for positive inputs, `slope * x` otherwise.
pub fn leaky_relu<T: Scalar>(input: &Tensor<T>, slope: T) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { slope * v })
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| T::one() / (T::one() + (-v).exp()))
}

#[derive(Debug, Clone)]
pub struct LeakyRelu<T> {
    pub slope: T,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> LeakyRelu<T> {
    pub fn new(slope: T) -> Result<Self> {
        if !(slope > T::zero() && slope < T::one()) {
            return Err(Error::invalid(format!(
                "leaky relu slope {slope} outside (0, 1)"
            )));
        }
        Ok(Self { slope, cache: None })
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Tensor<T> {
        self.cache = Some(input.clone());
        leaky_relu(input, self.slope)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::invalid("leaky relu backward before forward"))?;
        grad_out.expect_shape("leaky relu backward", x.shape())?;
        let mut g = grad_out.clone();
        for (d, &v) in g.data_mut().iter_mut().zip(x.data()) {
            if v <= T::zero() {
                *d = *d * self.slope;
            }
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid<T> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Tensor<T> {
        let y = sigmoid(input);
        self.cache = Some(y.clone());
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::invalid("sigmoid backward before forward"))?;
        grad_out.expect_shape("sigmoid backward", y.shape())?;
        let mut g = grad_out.clone();
        for (d, &s) in g.data_mut().iter_mut().zip(y.data()) {
            *d = *d * s * (T::one() - s);
        }
        Ok(g)
    }
}
