use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mode, Param, Sequential, Tensor};
use crate::error::Result;
use crate::scalar::Scalar;

/// A scalar-valued function of an input tensor and a set of parameters.
pub trait Differentiable<T: Scalar> {
    fn loss(&mut self, input: &Tensor<T>) -> Result<f64>;

    /// Zeroes parameter gradients, then runs forward and backward. Parameter
    /// gradients are left in the params; the input gradient is returned.
    fn loss_and_grad(&mut self, input: &Tensor<T>) -> Result<(f64, Tensor<T>)>;

    fn params_mut(&mut self) -> Vec<&mut Param<T>>;
}

/// Wraps a [`Sequential`] as `loss = <net(x), R>` for a fixed random `R`.
///
/// `grad_scale` multiplies every analytic gradient; anything but 1 makes the
/// gradients deliberately wrong.
#[derive(Debug, Clone)]
pub struct ProjectedLoss<T> {
    pub net: Sequential<T>,
    pub mode: Mode,
    pub grad_scale: f64,
    seed: u64,
    projection: Option<Tensor<T>>,
}

impl<T: Scalar> ProjectedLoss<T> {
    pub fn new(net: Sequential<T>, mode: Mode, seed: u64) -> Self {
        Self {
            net,
            mode,
            grad_scale: 1.0,
            seed,
            projection: None,
        }
    }

    pub fn corrupted(mut self, scale: f64) -> Self {
        self.grad_scale = scale;
        self
    }

    fn project(&mut self, out: &Tensor<T>) -> &Tensor<T> {
        if self.projection.as_ref().map(|p| p.shape()) != Some(out.shape()) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            self.projection = Some(Tensor::from_fn(out.shape(), |_| {
                T::of(rng.random_range(-1.0..1.0))
            }));
        }
        self.projection.as_ref().expect("projection just set")
    }
}

impl<T: Scalar> Differentiable<T> for ProjectedLoss<T> {
    fn loss(&mut self, input: &Tensor<T>) -> Result<f64> {
        let out = self.net.forward(input, self.mode)?;
        Ok(out.dot(self.project(&out)))
    }

    fn loss_and_grad(&mut self, input: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        for p in self.net.params_mut() {
            p.zero_grad();
        }
        let out = self.net.forward(input, self.mode)?;
        let r = self.project(&out).clone();
        let loss = out.dot(&r);
        let mut g = self.net.backward(&r)?;
        if self.grad_scale != 1.0 {
            let s = T::of(self.grad_scale);
            g = g.map(|v| v * s);
            for p in self.net.params_mut() {
                p.grad.iter_mut().for_each(|v| *v = *v * s);
            }
        }
        Ok((loss, g))
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.net.params_mut()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Number of coordinates sampled across the input and all parameters.
    pub coordinates: usize,
    /// Denominator floor so near-zero gradients do not blow up the ratio.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            coordinates: 128,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub mean_relative_error: f64,
    pub checked: usize,
    /// Name and index of the coordinate with the largest error.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Compares analytic gradients against central finite differences on a
/// random subset of input and parameter coordinates.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<T: Scalar, F: Differentiable<T>>(
    fragment: &mut F,
    input: &Tensor<T>,
    config: GradCheckConfig,
) -> Result<GradCheckReport> {
    let (_, input_grad) = fragment.loss_and_grad(input)?;
    let mut slots: Vec<(String, Vec<T>)> = vec![("input".to_string(), input_grad.data().to_vec())];
    slots.extend(
        fragment
            .params_mut()
            .iter()
            .map(|p| (p.name.clone(), p.grad.clone())),
    );
    let total: usize = slots.iter().map(|(_, g)| g.len()).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let picks = sample(&mut rng, total, config.coordinates.min(total)).into_vec();
    let h = config.step;
    let mut max_err = 0.0f64;
    let mut sum_err = 0.0;
    let mut worst = String::new();
    for flat in picks {
        let (slot, idx) = locate(&slots, flat);
        let analytic = slots[slot].1[idx].f64();
        let numeric = if slot == 0 {
            let mut x = input.clone();
            let base = x.data()[idx];
            x.data_mut()[idx] = T::of(base.f64() + h);
            let up = fragment.loss(&x)?;
            x.data_mut()[idx] = T::of(base.f64() - h);
            let down = fragment.loss(&x)?;
            (up - down) / (2.0 * h)
        } else {
            let base = fragment.params_mut()[slot - 1].value[idx];
            fragment.params_mut()[slot - 1].value[idx] = T::of(base.f64() + h);
            let up = fragment.loss(input)?;
            fragment.params_mut()[slot - 1].value[idx] = T::of(base.f64() - h);
            let down = fragment.loss(input)?;
            fragment.params_mut()[slot - 1].value[idx] = base;
            (up - down) / (2.0 * h)
        };
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(config.floor);
        sum_err += err;
        if err > max_err || worst.is_empty() {
            max_err = max_err.max(err);
            worst = format!(
                "{}[{idx}] analytic={analytic:.6e} numeric={numeric:.6e}",
                slots[slot].0
            );
        }
    }
    let checked = config.coordinates.min(total);
    Ok(GradCheckReport {
        max_relative_error: max_err,
        mean_relative_error: sum_err / checked.max(1) as f64,
        checked,
        worst,
    })
}

fn locate(slots: &[(String, Vec<impl Sized>)], mut flat: usize) -> (usize, usize) {
    for (i, (_, g)) in slots.iter().enumerate() {
        if flat < g.len() {
            return (i, flat);
        }
        flat -= g.len();
    }
    unreachable!("flat index within total")
}
