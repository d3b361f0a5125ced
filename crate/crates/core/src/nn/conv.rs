use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Param, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Kernel size, stride, symmetric zero padding and (transpose-only) output
/// padding, each as `(rows, cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    #[serde(default)]
    pub output_padding: (usize, usize),
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
            output_padding: (0, 0),
        }
    }

    pub fn with_output_padding(mut self, rows: usize, cols: usize) -> Self {
        self.output_padding = (rows, cols);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::invalid("kernel must be non-empty"));
        }
        Ok(())
    }

    fn kernel_area(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }
}

/// `floor((len + 2 * pad - kernel) / stride) + 1`, or `None` when the kernel
/// does not fit.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (len + 2 * pad).checked_sub(kernel).map(|r| r / stride + 1)
}

/// `(len - 1) * stride - 2 * pad + kernel + output_padding`.
pub fn transpose_output_len(
    len: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Option<usize> {
    ((len.checked_sub(1)?) * stride + kernel + out_pad).checked_sub(2 * pad)
}

/// Unfolds one `(c, h, w)` image into a `(c * kh * kw, oh * ow)` patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeometry,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = (g.padding.0 as isize, g.padding.1 as isize);
    let plane = oh * ow;
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * sh + ki) as isize - ph;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * sw + kj) as isize - pw;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds a patch matrix back into an image.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeometry,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = (g.padding.0 as isize, g.padding.1 as isize);
    let plane = oh * ow;
    for ci in 0..c {
        let dst = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * sh + ki) as isize - ph;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * sw + kj) as isize - pw;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn kaiming<T: Scalar, R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| T::of(normal.sample(rng))).collect()
}

/// 2-D convolution with weight `(out, in, kh, kw)` and per-channel bias.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Zero-initialized layer.
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
    ) -> Self {
        let (kh, kw) = geometry.kernel;
        Self {
            in_channels,
            out_channels,
            geometry,
            weight: Param::filled(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kh, kw],
                T::zero(),
            ),
            bias: Param::filled(format!("{name}.bias"), vec![out_channels], T::zero()),
            cache: None,
        }
    }

    /// Fan-in scaled normal weights, zero bias.
    pub fn init<R: Rng + ?Sized>(mut self, rng: &mut R) -> Self {
        let fan_in = self.in_channels * self.geometry.kernel_area();
        self.weight.value = kaiming(self.weight.len(), fan_in, rng);
        self
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        self.geometry.validate()?;
        if input[1] != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input with {} channels", self.in_channels),
                format!("{input:?}"),
            ));
        }
        let g = &self.geometry;
        let too_small = || {
            Error::shape(
                "conv2d",
                format!("spatial dims >= kernel {:?}", g.kernel),
                format!("{input:?}"),
            )
        };
        let oh =
            conv_output_len(input[2], g.kernel.0, g.stride.0, g.padding.0).ok_or_else(too_small)?;
        let ow =
            conv_output_len(input[3], g.kernel.1, g.stride.1, g.padding.1).ok_or_else(too_small)?;
        Ok([input[0], self.out_channels, oh, ow])
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = conv2d(input, self)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::invalid("conv2d backward before forward"))?;
        let [n, c, h, w] = input.shape();
        let out_shape = self.output_shape(input.shape())?;
        grad_out.expect_shape("conv2d backward", out_shape)?;
        let [_, oc, oh, ow] = out_shape;
        let g = self.geometry;
        let ckk = c * g.kernel_area();
        let plane = oh * ow;
        let mut cols = vec![T::zero(); ckk * plane];
        let mut dcols = vec![T::zero(); ckk * plane];
        let mut grad_in = Tensor::zeros([n, c, h, w]);
        for b in 0..n {
            let dy = grad_out.item(b);
            im2col(input.item(b), c, h, w, &g, oh, ow, &mut cols);
            // dW += dy (oc x plane) * cols^T (plane x ckk)
            T::gemm(
                oc,
                plane,
                ckk,
                T::one(),
                dy,
                plane as isize,
                1,
                &cols,
                1,
                plane as isize,
                T::one(),
                &mut self.weight.grad,
                ckk as isize,
                1,
            );
            for (o, gb) in self.bias.grad.iter_mut().enumerate() {
                *gb = *gb + dy[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
            }
            // dcols = W^T (ckk x oc) * dy (oc x plane)
            T::gemm(
                ckk,
                oc,
                plane,
                T::one(),
                &self.weight.value,
                1,
                ckk as isize,
                dy,
                plane as isize,
                1,
                T::zero(),
                &mut dcols,
                plane as isize,
                1,
            );
            col2im(&dcols, c, h, w, &g, oh, ow, grad_in.item_mut(b));
        }
        Ok(grad_in)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Pure convolution: `out[o] = bias[o] + sum_c weight[o, c] * input[c]` over
/// each kernel window.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, params: &Conv2d<T>) -> Result<Tensor<T>> {
    let out_shape = params.output_shape(input.shape())?;
    let [n, c, h, w] = input.shape();
    let [_, oc, oh, ow] = out_shape;
    let g = params.geometry;
    let ckk = c * g.kernel_area();
    let plane = oh * ow;
    let mut cols = vec![T::zero(); ckk * plane];
    let mut out = Tensor::zeros(out_shape);
    for b in 0..n {
        im2col(input.item(b), c, h, w, &g, oh, ow, &mut cols);
        let y = out.item_mut(b);
        for (o, &bias) in params.bias.value.iter().enumerate() {
            y[o * plane..(o + 1) * plane]
                .iter_mut()
                .for_each(|v| *v = bias);
        }
        T::gemm(
            oc,
            ckk,
            plane,
            T::one(),
            &params.weight.value,
            ckk as isize,
            1,
            &cols,
            plane as isize,
            1,
            T::one(),
            y,
            plane as isize,
            1,
        );
    }
    Ok(out)
}

/// Transposed convolution with weight `(in, out, kh, kw)`; the adjoint of
/// [`conv2d`] with the same geometry, plus bias.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
    ) -> Self {
        let (kh, kw) = geometry.kernel;
        Self {
            in_channels,
            out_channels,
            geometry,
            weight: Param::filled(
                format!("{name}.weight"),
                vec![in_channels, out_channels, kh, kw],
                T::zero(),
            ),
            bias: Param::filled(format!("{name}.bias"), vec![out_channels], T::zero()),
            cache: None,
        }
    }

    pub fn init<R: Rng + ?Sized>(mut self, rng: &mut R) -> Self {
        // Each output pixel receives roughly in * k^2 / stride^2 taps.
        let (sh, sw) = self.geometry.stride;
        let fan_in = (self.in_channels * self.geometry.kernel_area() / (sh * sw)).max(1);
        self.weight.value = kaiming(self.weight.len(), fan_in, rng);
        self
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let g = &self.geometry;
        g.validate()?;
        if g.output_padding.0 >= g.stride.0 || g.output_padding.1 >= g.stride.1 {
            return Err(Error::invalid(format!(
                "output padding {:?} must be < stride {:?}",
                g.output_padding, g.stride
            )));
        }
        if input[1] != self.in_channels {
            return Err(Error::shape(
                "transpose_conv2d",
                format!("input with {} channels", self.in_channels),
                format!("{input:?}"),
            ));
        }
        let bad = || Error::shape("transpose_conv2d", "non-empty output", format!("{input:?}"));
        let oh = transpose_output_len(
            input[2],
            g.kernel.0,
            g.stride.0,
            g.padding.0,
            g.output_padding.0,
        )
        .filter(|&v| v > 0)
        .ok_or_else(bad)?;
        let ow = transpose_output_len(
            input[3],
            g.kernel.1,
            g.stride.1,
            g.padding.1,
            g.output_padding.1,
        )
        .filter(|&v| v > 0)
        .ok_or_else(bad)?;
        Ok([input[0], self.out_channels, oh, ow])
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = transpose_conv2d(input, self)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::invalid("transpose_conv2d backward before forward"))?;
        let out_shape = self.output_shape(input.shape())?;
        grad_out.expect_shape("transpose_conv2d backward", out_shape)?;
        let [n, cin, h, w] = input.shape();
        let [_, cout, oh, ow] = out_shape;
        let g = self.geometry;
        let ckk = cout * g.kernel_area();
        let plane = h * w;
        let mut cols = vec![T::zero(); ckk * plane];
        let mut grad_in = Tensor::zeros(input.shape());
        for b in 0..n {
            let dy = grad_out.item(b);
            for (o, gb) in self.bias.grad.iter_mut().enumerate() {
                *gb = *gb
                    + dy[o * oh * ow..(o + 1) * oh * ow]
                        .iter()
                        .copied()
                        .sum::<T>();
            }
            im2col(dy, cout, oh, ow, &g, h, w, &mut cols);
            let x = input.item(b);
            // dW += x (cin x plane) * cols^T (plane x ckk)
            T::gemm(
                cin,
                plane,
                ckk,
                T::one(),
                x,
                plane as isize,
                1,
                &cols,
                1,
                plane as isize,
                T::one(),
                &mut self.weight.grad,
                ckk as isize,
                1,
            );
            // dx = W (cin x ckk) * cols (ckk x plane)
            T::gemm(
                cin,
                ckk,
                plane,
                T::one(),
                &self.weight.value,
                ckk as isize,
                1,
                &cols,
                plane as isize,
                1,
                T::zero(),
                grad_in.item_mut(b),
                plane as isize,
                1,
            );
        }
        Ok(grad_in)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Pure transposed convolution.
pub fn transpose_conv2d<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvTranspose2d<T>,
) -> Result<Tensor<T>> {
    let out_shape = params.output_shape(input.shape())?;
    let [n, cin, h, w] = input.shape();
    let [_, cout, oh, ow] = out_shape;
    let g = params.geometry;
    let ckk = cout * g.kernel_area();
    let plane = h * w;
    let mut cols = vec![T::zero(); ckk * plane];
    let mut out = Tensor::zeros(out_shape);
    for b in 0..n {
        // cols = W^T (ckk x cin) * x (cin x plane)
        T::gemm(
            ckk,
            cin,
            plane,
            T::one(),
            &params.weight.value,
            1,
            ckk as isize,
            input.item(b),
            plane as isize,
            1,
            T::zero(),
            &mut cols,
            plane as isize,
            1,
        );
        let y = out.item_mut(b);
        col2im(&cols, cout, oh, ow, &g, h, w, y);
        for (o, &bias) in params.bias.value.iter().enumerate() {
            y[o * oh * ow..(o + 1) * oh * ow]
                .iter_mut()
                .for_each(|v| *v = *v + bias);
        }
    }
    Ok(out)
}
