use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Downward-looking pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraGeometry {
    pub fov_h_deg: f64,
    pub fov_v_deg: f64,
    pub altitude_m: f64,
    pub width_px: usize,
    pub height_px: usize,
}

impl Default for CameraGeometry {
    fn default() -> Self {
        let fov_h: f64 = 60.0;
        // Square pixels: the vertical FOV follows from the 80x64 aspect.
        let fov_v = 2.0 * ((fov_h.to_radians() / 2.0).tan() * 64.0 / 80.0).atan();
        Self {
            fov_h_deg: fov_h,
            fov_v_deg: fov_v.to_degrees(),
            altitude_m: 2.0,
            width_px: 80,
            height_px: 64,
        }
    }
}

impl CameraGeometry {
    pub fn validate(&self) -> Result<()> {
        let fov_ok = |f: f64| f > 0.0 && f < 180.0;
        if !fov_ok(self.fov_h_deg) || !fov_ok(self.fov_v_deg) {
            return Err(Error::invalid(format!(
                "field of view must lie in (0, 180) degrees, got {} x {}",
                self.fov_h_deg, self.fov_v_deg
            )));
        }
        if !(self.altitude_m > 0.0 && self.altitude_m.is_finite()) {
            return Err(Error::invalid(format!(
                "altitude must be positive, got {} m",
                self.altitude_m
            )));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::invalid("image size must be non-zero"));
        }
        Ok(())
    }

    pub fn with_altitude(self, altitude_m: f64) -> Self {
        Self { altitude_m, ..self }
    }

    /// Ground footprint (width, height) in metres.
    pub fn footprint(&self) -> (f64, f64) {
        let side = |fov: f64| 2.0 * self.altitude_m * (fov.to_radians() / 2.0).tan();
        (side(self.fov_h_deg), side(self.fov_v_deg))
    }

    pub fn pixels_per_metre(&self) -> f64 {
        self.width_px as f64 / self.footprint().0
    }
}

/// Physical object size range; `margin` widens the pixel-area gate on both
/// sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeBounds {
    pub min_side_m: f64,
    pub max_side_m: f64,
    pub margin: f64,
}

impl Default for SizeBounds {
    fn default() -> Self {
        Self {
            min_side_m: 0.3,
            max_side_m: 0.3,
            margin: 2.0,
        }
    }
}

impl SizeBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_side_m > 0.0
            && self.min_side_m <= self.max_side_m
            && self.max_side_m.is_finite())
        {
            return Err(Error::invalid(format!(
                "object sides must satisfy 0 < min <= max, got [{}, {}]",
                self.min_side_m, self.max_side_m
            )));
        }
        if !(self.margin >= 1.0 && self.margin.is_finite()) {
            return Err(Error::invalid(format!(
                "margin must be >= 1, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Inclusive pixel-area gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBounds {
    pub min_px: f64,
    pub max_px: f64,
}

impl PixelBounds {
    pub fn new(min_px: f64, max_px: f64) -> Result<Self> {
        if !(min_px >= 0.0 && min_px <= max_px) {
            return Err(Error::invalid(format!(
                "pixel bounds must satisfy 0 <= min <= max, got [{min_px}, {max_px}]"
            )));
        }
        Ok(Self { min_px, max_px })
    }

    pub fn contains(&self, area: usize) -> bool {
        let a = area as f64;
        a >= self.min_px && a <= self.max_px
    }
}

/// Converts physical object sides into a pixel-area range for this camera.
pub fn pixel_bounds(geometry: &CameraGeometry, bounds: &SizeBounds) -> Result<PixelBounds> {
    geometry.validate()?;
    bounds.validate()?;
    let ppm = geometry.pixels_per_metre();
    let lo = (bounds.min_side_m * ppm).powi(2) / bounds.margin;
    let hi = (bounds.max_side_m * ppm).powi(2) * bounds.margin;
    PixelBounds::new(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_calculation() {
        let g = CameraGeometry::default();
        let (fw, _) = g.footprint();
        assert!((fw - 2.309).abs() < 5e-4);
        assert!((g.pixels_per_metre() - 34.64).abs() < 5e-3);
        let b = pixel_bounds(&g, &SizeBounds::default()).unwrap();
        assert!((b.min_px - 54.0).abs() < 0.5 && (b.max_px - 216.0).abs() < 0.5);
    }

    #[test]
    fn doubling_altitude_quarters_area() {
        let g = CameraGeometry::default();
        let far = g.with_altitude(4.0);
        assert!((far.pixels_per_metre() * 2.0 - g.pixels_per_metre()).abs() < 1e-9);
        let b1 = pixel_bounds(&g, &SizeBounds::default()).unwrap();
        let b2 = pixel_bounds(&far, &SizeBounds::default()).unwrap();
        assert!((b1.min_px / b2.min_px - 4.0).abs() < 1e-9);
    }

    #[test]
    fn unit_margin_collapses_range() {
        let b = pixel_bounds(
            &CameraGeometry::default(),
            &SizeBounds {
                margin: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(b.min_px, b.max_px);
    }

    #[test]
    fn invalid_geometry_rejected() {
        let g = CameraGeometry::default();
        assert!(pixel_bounds(&g.with_altitude(0.0), &SizeBounds::default()).is_err());
        assert!(pixel_bounds(
            &CameraGeometry {
                fov_h_deg: 180.0,
                ..g
            },
            &SizeBounds::default()
        )
        .is_err());
        assert!(pixel_bounds(
            &g,
            &SizeBounds {
                margin: 0.5,
                ..Default::default()
            }
        )
        .is_err());
    }
}
