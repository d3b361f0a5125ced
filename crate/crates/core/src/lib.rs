//! Semi-supervised anomaly detection for seafloor imagery.
//!
//! A variational autoencoder is trained on inlier images only. Each image is
//! then scored by two complementary signals:
//!
//! 1. **Latent density**: encoder means are reduced to 2-D with exact t-SNE,
//!    a Gaussian KDE with cross-validated bandwidth is fitted, and images in
//!    the low-density tail are flagged.
//! 2. **ROI score**: the squared reconstruction error is median-blurred,
//!    thresholded, opened, and segmented; connected regions whose pixel area
//!    matches the expected physical object size (from camera field of view and
//!    altitude) contribute their mean error as the score.
//!
//! The joint detector flags an image only when both gates fire.
//!
//! The numeric core ([`nn`], [`vae`], [`latent`], [`roi`]) is generic over
//! [`Scalar`]; `f32` is used for training and `f64` for gradient checks.

pub mod error;
pub mod latent;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod roi;
pub mod scalar;
pub mod vae;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision tensor, the training default.
pub type Tensor32 = nn::Tensor<f32>;
/// Double-precision tensor, used by gradient checks and oracles.
pub type Tensor64 = nn::Tensor<f64>;
/// Single-precision VAE.
pub type Vae32 = vae::Vae<f32>;
/// Double-precision VAE.
pub type Vae64 = vae::Vae<f64>;
/// Embeddings in double precision, as produced by the detector.
pub type Embedding64 = latent::EmbeddingSet<f64>;
/// Heatmaps in single precision, matching the model output.
pub type Heatmap32 = roi::AnomalyHeatmap<f32>;
