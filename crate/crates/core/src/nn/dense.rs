use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Param, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fully connected layer on `(batch, features, 1, 1)` tensors; weight is `(out, in)`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(name: &str, in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::filled(
                format!("{name}.weight"),
                vec![out_features, in_features],
                T::zero(),
            ),
            bias: Param::filled(format!("{name}.bias"), vec![out_features], T::zero()),
            cache: None,
        }
    }

    /// Fan-in scaled normal weights multiplied by `gain`.
    pub fn init<R: Rng + ?Sized>(mut self, rng: &mut R, gain: f64) -> Self {
        let std = gain * (1.0 / self.in_features.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        self.weight.value = (0..self.weight.len())
            .map(|_| T::of(normal.sample(rng)))
            .collect();
        self
    }

    fn check(&self, input: &Tensor<T>) -> Result<usize> {
        if input.item_len() != self.in_features {
            return Err(Error::shape(
                "dense",
                format!("{} features per item", self.in_features),
                format!("{:?}", input.shape()),
            ));
        }
        Ok(input.batch())
    }

    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check(input)?;
        let (i, o) = (self.in_features, self.out_features);
        let mut out = Tensor::zeros([n, o, 1, 1]);
        for b in 0..n {
            out.item_mut(b).copy_from_slice(&self.bias.value);
        }
        // out (n x o) += x (n x i) * W^T (i x o)
        T::gemm(
            n,
            i,
            o,
            T::one(),
            input.data(),
            i as isize,
            1,
            &self.weight.value,
            1,
            i as isize,
            T::one(),
            out.data_mut(),
            o as isize,
            1,
        );
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.apply(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::invalid("dense backward before forward"))?;
        let n = x.batch();
        let (i, o) = (self.in_features, self.out_features);
        grad_out.expect_shape("dense backward", [n, o, 1, 1])?;
        let dy = grad_out.data();
        // dW (o x i) += dy^T (o x n) * x (n x i)
        T::gemm(
            o,
            n,
            i,
            T::one(),
            dy,
            1,
            o as isize,
            x.data(),
            i as isize,
            1,
            T::one(),
            &mut self.weight.grad,
            i as isize,
            1,
        );
        for b in 0..n {
            for (g, &d) in self.bias.grad.iter_mut().zip(&dy[b * o..(b + 1) * o]) {
                *g = *g + d;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        // dx (n x i) = dy (n x o) * W (o x i)
        T::gemm(
            n,
            o,
            i,
            T::one(),
            dy,
            o as isize,
            1,
            &self.weight.value,
            i as isize,
            1,
            T::zero(),
            dx.data_mut(),
            i as isize,
            1,
        );
        Ok(dx)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
