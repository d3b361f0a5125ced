use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub latent_dim: usize,
    /// `(channels, height, width)` of input images.
    pub input_shape: [usize; 3],
    /// Output channels of the five encoder convolutions.
    pub channels: [usize; 5],
    pub leaky_slope: f64,
    pub learning_rate: f64,
    /// Stop after this many consecutive epochs without a validation improvement.
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            input_shape: [3, 64, 80],
            channels: [32, 64, 128, 256, 512],
            leaky_slope: 0.2,
            learning_rate: 1e-3,
            patience: 3,
            max_epochs: 200,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn with_latent_dim(mut self, d: usize) -> Self {
        self.latent_dim = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape;
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent dimension must be >= 1"));
        }
        if c == 0 || h < 32 || w < 32 {
            return Err(Error::invalid(format!(
                "input shape {:?} must have C >= 1 and H, W >= 32",
                self.input_shape
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::invalid("encoder channel widths must be positive"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::invalid("leaky relu slope must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0) || self.batch_size < 2 || self.max_epochs == 0 {
            return Err(Error::invalid(
                "learning rate, batch size (>= 2) and max epochs must be positive",
            ));
        }
        Ok(())
    }
}
