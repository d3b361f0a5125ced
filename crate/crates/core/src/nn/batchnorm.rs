use super::{Mode, Param, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-channel batch normalization over `(batch, height, width)`.
///
/// Running variance tracks the unbiased batch variance and starts at 1.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    mode: Mode,
    shape: [usize; 4],
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(format!("{name}.gamma"), vec![channels], T::one()),
            beta: Param::filled(format!("{name}.beta"), vec![channels], T::zero()),
            running_mean: Param::filled(format!("{name}.running_mean"), vec![channels], T::zero()),
            running_var: Param::filled(format!("{name}.running_var"), vec![channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (out, cache, stats) = run(input, self, mode)?;
        if let Some((mean, var)) = stats {
            let [n, _, h, w] = input.shape();
            let m = (n * h * w) as f64;
            let mom = self.momentum;
            for c in 0..self.channels {
                let unbiased = var[c] * m / (m - 1.0);
                let rm = &mut self.running_mean.value[c];
                *rm = T::of((1.0 - mom) * rm.f64() + mom * mean[c]);
                let rv = &mut self.running_var.value[c];
                *rv = T::of((1.0 - mom) * rv.f64() + mom * unbiased);
            }
        }
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::invalid("batchnorm backward before forward"))?;
        grad_out.expect_shape("batchnorm backward", cache.shape)?;
        let [n, ch, h, w] = cache.shape;
        let plane = h * w;
        let m = (n * plane) as f64;
        let mut grad_in = Tensor::zeros(cache.shape);
        for c in 0..ch {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for b in 0..n {
                let off = (b * ch + c) * plane;
                for i in off..off + plane {
                    let dy = grad_out.data()[i].f64();
                    sum_dy += dy;
                    sum_dy_xhat += dy * cache.normalized[i];
                }
            }
            self.gamma.grad[c] = self.gamma.grad[c] + T::of(sum_dy_xhat);
            self.beta.grad[c] = self.beta.grad[c] + T::of(sum_dy);
            let gamma = self.gamma.value[c].f64();
            let inv_std = cache.inv_std[c];
            for b in 0..n {
                let off = (b * ch + c) * plane;
                for i in off..off + plane {
                    let dy = grad_out.data()[i].f64();
                    let dx = match cache.mode {
                        Mode::Train => {
                            gamma * inv_std / m
                                * (m * dy - sum_dy - cache.normalized[i] * sum_dy_xhat)
                        }
                        Mode::Eval => gamma * inv_std * dy,
                    };
                    grad_in.data_mut()[i] = T::of(dx);
                }
            }
        }
        Ok(grad_in)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    /// Running statistics: persisted, never optimized.
    pub fn buffers(&self) -> Vec<&Param<T>> {
        vec![&self.running_mean, &self.running_var]
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }

    /// Parameters and buffers borrowed together.
    pub fn split_mut(&mut self) -> (Vec<&mut Param<T>>, Vec<&mut Param<T>>) {
        (
            vec![&mut self.gamma, &mut self.beta],
            vec![&mut self.running_mean, &mut self.running_var],
        )
    }
}

type BatchStats = Option<(Vec<f64>, Vec<f64>)>;

fn run<T: Scalar>(
    input: &Tensor<T>,
    bn: &BatchNorm2d<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache, BatchStats)> {
    let [n, ch, h, w] = input.shape();
    if ch != bn.channels {
        return Err(Error::shape(
            "batchnorm",
            format!("input with {} channels", bn.channels),
            format!("{:?}", input.shape()),
        ));
    }
    if mode == Mode::Train && n < 2 {
        return Err(Error::invalid(
            "batchnorm in train mode needs a batch of at least 2",
        ));
    }
    let plane = h * w;
    let m = (n * plane) as f64;
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; ch];
            let mut var = vec![0.0; ch];
            for c in 0..ch {
                let vals = (0..n).flat_map(|b| {
                    input.data()[(b * ch + c) * plane..(b * ch + c + 1) * plane].iter()
                });
                let mu = vals.clone().map(|v| v.f64()).sum::<f64>() / m;
                mean[c] = mu;
                var[c] = vals.map(|v| (v.f64() - mu).powi(2)).sum::<f64>() / m;
            }
            (mean, var)
        }
        Mode::Eval => (
            bn.running_mean.value.iter().map(|v| v.f64()).collect(),
            bn.running_var.value.iter().map(|v| v.f64()).collect(),
        ),
    };
    if let Some(c) = var.iter().position(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid(format!(
            "batchnorm variance of channel {c} is invalid"
        )));
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
    let mut normalized = vec![0.0; input.len()];
    let mut out = Tensor::zeros(input.shape());
    for b in 0..n {
        for c in 0..ch {
            let off = (b * ch + c) * plane;
            let (g, be) = (bn.gamma.value[c].f64(), bn.beta.value[c].f64());
            for i in off..off + plane {
                let xhat = (input.data()[i].f64() - mean[c]) * inv_std[c];
                normalized[i] = xhat;
                out.data_mut()[i] = T::of(g * xhat + be);
            }
        }
    }
    let stats = (mode == Mode::Train).then_some((mean, var));
    Ok((
        out,
        BnCache {
            mode,
            shape: input.shape(),
            normalized,
            inv_std,
        },
        stats,
    ))
}

/// Pure batch normalization; does not touch running statistics.
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    params: &BatchNorm2d<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    run(input, params, mode).map(|(out, _, _)| out)
}
