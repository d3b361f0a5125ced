//! Minimal convolutional network kernel with hand-derived reverse-mode
//! gradients for the fixed layer set used by the VAE.
//!
//! Every layer caches what its backward pass needs during `forward` and
//! accumulates parameter gradients into its [`Param`]s during `backward`.
//! There is no general autodiff graph: layers are composed in order and
//! gradients are propagated back through them in reverse.

mod activation;
mod adam;
mod batchnorm;
mod conv;
mod dense;
mod gradcheck;
mod layer;
mod param;
mod tensor;

pub use activation::{leaky_relu, sigmoid, LeakyRelu, Sigmoid};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use batchnorm::{batchnorm, BatchNorm2d};
pub use conv::{
    conv2d, conv_output_len, transpose_conv2d, transpose_output_len, Conv2d, ConvGeometry,
    ConvTranspose2d,
};
pub use dense::Dense;
pub use gradcheck::{grad_check, Differentiable, GradCheckConfig, GradCheckReport, ProjectedLoss};
pub use layer::{Layer, Sequential};
pub use param::Param;
pub use tensor::Tensor;

/// Whether batch normalization uses batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
