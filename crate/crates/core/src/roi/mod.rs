//! Reconstruction-error heatmaps and size-gated regions of interest.
//!
//! The chain is heatmap, median blur, binarization, morphological opening,
//! connected components, and an area gate derived from camera geometry.

mod contour;
mod filter;
mod geometry;

pub use contour::{extract_rois, label_components, BBox, Roi};
pub use filter::{binarize, median_blur, morph, open, otsu_threshold, Mask, MorphOp};
pub use geometry::{pixel_bounds, CameraGeometry, PixelBounds, SizeBounds};

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Per-pixel squared reconstruction error summed over channels.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyHeatmap<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
    id: String,
}

impl<T: Scalar> AnomalyHeatmap<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>, id: impl Into<String>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape("heatmap", height * width, values.len()));
        }
        if values.iter().any(|v| !(*v >= T::zero())) {
            return Err(Error::invalid(
                "heatmap values must be finite and non-negative",
            ));
        }
        Ok(Self {
            height,
            width,
            values,
            id: id.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.width + c]
    }

    pub fn scaled(&self, c: T) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.values.iter().map(|v| *v * c).collect(),
            self.id.clone(),
        )
    }

    /// Mean and population standard deviation.
    pub fn moments(&self) -> (f64, f64) {
        let n = self.values.len().max(1) as f64;
        let mean = self.values.iter().map(|v| v.f64()).sum::<f64>() / n;
        let var = self
            .values
            .iter()
            .map(|v| (v.f64() - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }

    /// Min-max normalized 8-bit rendering, for display only.
    pub fn to_gray_image(&self) -> GrayImage {
        let lo = self
            .values
            .iter()
            .map(|v| v.f64())
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .values
            .iter()
            .map(|v| v.f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = (self.get(y as usize, x as usize).f64() - lo) / span;
            image::Luma([(v * 255.0).round() as u8])
        })
    }
}

impl Mask {
    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            image::Luma([if self.get(y as usize, x as usize) {
                255
            } else {
                0
            }])
        })
    }
}

/// Heatmap of a single image (`(1, C, H, W)`) against its reconstruction.
pub fn heatmap<T: Scalar>(
    image: &Tensor<T>,
    reconstruction: &Tensor<T>,
) -> Result<AnomalyHeatmap<T>> {
    if image.shape() != reconstruction.shape() || image.batch() != 1 {
        return Err(Error::shape(
            "heatmap",
            format!("matching (1, C, H, W), image {:?}", image.shape()),
            format!("{:?}", reconstruction.shape()),
        ));
    }
    let [_, c, h, w] = image.shape();
    let (a, b) = (image.data(), reconstruction.data());
    let values = (0..h * w)
        .map(|p| {
            (0..c)
                .map(|ch| (a[ch * h * w + p] - b[ch * h * w + p]).powi(2))
                .fold(T::zero(), |s, v| s + v)
        })
        .collect();
    AnomalyHeatmap::new(h, w, values, "")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum ThresholdRule {
    /// `mean + sigmas * std` of the blurred heatmap, never below `floor`.
    Adaptive {
        sigmas: f64,
        floor: f64,
    },
    Fixed {
        value: f64,
    },
    Otsu,
    /// The `quantile`-th percentile of per-image maxima of blurred heatmaps
    /// from held-out inlier images. Must be turned into `Fixed` with
    /// [`calibrate_threshold`] before use.
    Calibrated {
        quantile: f64,
    },
}

impl ThresholdRule {
    pub fn resolve<T: Scalar>(&self, blurred: &AnomalyHeatmap<T>) -> f64 {
        match *self {
            ThresholdRule::Adaptive { sigmas, floor } => {
                let (mean, std) = blurred.moments();
                (mean + sigmas * std).max(floor)
            }
            ThresholdRule::Fixed { value } => value,
            ThresholdRule::Otsu => otsu_threshold(blurred),
            ThresholdRule::Calibrated { .. } => f64::NAN,
        }
    }
}

/// Resolves a `Calibrated` rule to a fixed threshold from inlier heatmaps;
/// other rules are returned unchanged.
pub fn calibrate_threshold<T: Scalar>(
    rule: ThresholdRule,
    inlier_maps: &[AnomalyHeatmap<T>],
    median_kernel: usize,
) -> Result<ThresholdRule> {
    let ThresholdRule::Calibrated { quantile } = rule else {
        return Ok(rule);
    };
    if inlier_maps.is_empty() {
        return Err(Error::Empty("inlier heatmaps for threshold calibration"));
    }
    let maxima = inlier_maps
        .iter()
        .map(|m| {
            Ok(median_blur(m, median_kernel)?
                .values()
                .iter()
                .fold(0.0f64, |a, v| a.max(v.f64())))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ThresholdRule::Fixed {
        value: crate::latent::percentile(&maxima, quantile)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoiConfig {
    pub median_kernel: usize,
    pub open_kernel: usize,
    pub open_iterations: usize,
    pub threshold: ThresholdRule,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            median_kernel: 5,
            open_kernel: 3,
            open_iterations: 1,
            threshold: ThresholdRule::Adaptive {
                sigmas: 3.0,
                floor: 1e-2,
            },
        }
    }
}

/// Every intermediate of the ROI chain for one image.
#[derive(Debug, Clone)]
pub struct RoiAnalysis<T> {
    pub heatmap: AnomalyHeatmap<T>,
    pub blurred: AnomalyHeatmap<T>,
    pub threshold: f64,
    pub mask: Mask,
    pub rois: Vec<Roi>,
    /// Largest `mean_error` among surviving ROIs, 0 when none survive.
    pub score: f64,
}

pub fn analyze<T: Scalar>(
    map: AnomalyHeatmap<T>,
    bounds: PixelBounds,
    config: &RoiConfig,
) -> Result<RoiAnalysis<T>> {
    let blurred = median_blur(&map, config.median_kernel)?;
    if let ThresholdRule::Calibrated { .. } = config.threshold {
        return Err(Error::invalid(
            "calibrated threshold must be resolved with calibrate_threshold first",
        ));
    }
    let threshold = config.threshold.resolve(&blurred);
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::invalid(format!(
            "binarization threshold must be >= 0, got {threshold}"
        )));
    }
    let mask = open(
        &binarize(&blurred, threshold),
        config.open_kernel,
        config.open_iterations,
    )?;
    let rois = extract_rois(&mask, &blurred, bounds)?;
    let score = rois.iter().map(|r| r.mean_error).fold(0.0, f64::max);
    Ok(RoiAnalysis {
        heatmap: map,
        blurred,
        threshold,
        mask,
        rois,
        score,
    })
}

/// Full chain from an image and its reconstruction to the ROI score.
pub fn roi_score<T: Scalar>(
    image: &Tensor<T>,
    reconstruction: &Tensor<T>,
    geometry: &CameraGeometry,
    bounds: &SizeBounds,
    config: &RoiConfig,
) -> Result<f64> {
    let px = pixel_bounds(geometry, bounds)?;
    Ok(analyze(heatmap(image, reconstruction)?, px, config)?.score)
}
