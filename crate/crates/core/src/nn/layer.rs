use super::{BatchNorm2d, Conv2d, ConvTranspose2d, Dense, LeakyRelu, Mode, Param, Sigmoid, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One stage of a [`Sequential`] stack.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    ConvTranspose(ConvTranspose2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Dense(Dense<T>),
    LeakyRelu(LeakyRelu<T>),
    Sigmoid(Sigmoid<T>),
    /// Reinterprets each item as `(c, h, w)`; used between dense and conv stages.
    Reshape {
        item: [usize; 3],
        cached: Option<[usize; 4]>,
    },
}

impl<T: Scalar> Layer<T> {
    pub fn reshape(item: [usize; 3]) -> Self {
        Layer::Reshape { item, cached: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::ConvTranspose(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Dense(l) => l.forward(x),
            Layer::LeakyRelu(l) => Ok(l.forward(x)),
            Layer::Sigmoid(l) => Ok(l.forward(x)),
            Layer::Reshape { item, cached } => {
                *cached = Some(x.shape());
                x.clone().reshape([x.batch(), item[0], item[1], item[2]])
            }
        }
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(grad),
            Layer::ConvTranspose(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Dense(l) => l.backward(grad),
            Layer::LeakyRelu(l) => l.backward(grad),
            Layer::Sigmoid(l) => l.backward(grad),
            Layer::Reshape { cached, .. } => {
                let shape =
                    cached.ok_or_else(|| Error::invalid("reshape backward before forward"))?;
                grad.clone().reshape(shape)
            }
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(l) => l.params(),
            Layer::ConvTranspose(l) => l.params(),
            Layer::BatchNorm(l) => l.params(),
            Layer::Dense(l) => l.params(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(l) => l.params_mut(),
            Layer::ConvTranspose(l) => l.params_mut(),
            Layer::BatchNorm(l) => l.params_mut(),
            Layer::Dense(l) => l.params_mut(),
            _ => Vec::new(),
        }
    }

    pub fn buffers(&self) -> Vec<&Param<T>> {
        match self {
            Layer::BatchNorm(l) => l.buffers(),
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::BatchNorm(l) => l.buffers_mut(),
            _ => Vec::new(),
        }
    }

    pub fn split_mut(&mut self) -> (Vec<&mut Param<T>>, Vec<&mut Param<T>>) {
        match self {
            Layer::BatchNorm(l) => l.split_mut(),
            other => (other.params_mut(), Vec::new()),
        }
    }
}

/// Layers applied in order; backward runs them in reverse.
#[derive(Debug, Clone, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn buffers(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.buffers_mut())
            .collect()
    }

    /// `(params_mut(), buffers_mut())` under a single borrow.
    pub fn split_mut(&mut self) -> (Vec<&mut Param<T>>, Vec<&mut Param<T>>) {
        let (mut params, mut buffers) = (Vec::new(), Vec::new());
        for l in &mut self.layers {
            let (p, b) = l.split_mut();
            params.extend(p);
            buffers.extend(b);
        }
        (params, buffers)
    }
}
