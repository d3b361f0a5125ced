//! Procedural stand-in for downward-looking survey imagery.
//!
//! Inlier images are one of three habitat textures (rippled sand, streaky
//! seagrass, blotchy rock) built from multi-octave value noise, with
//! per-image exposure and vignetting. Outliers additionally contain one
//! bright quadrilateral panel whose side is the configured physical size
//! projected through the camera geometry.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{
    DatasetManifest, ImageRecord, Label, ManifestHeader, Source, Split, MANIFEST_VERSION,
};
use crate::error::{Error, Result};
use crate::roi::{pixel_bounds, CameraGeometry, SizeBounds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureConfig {
    pub octaves: usize,
    /// Lattice cells across the image at the coarsest octave.
    pub base_cells: usize,
    pub persistence: f64,
    /// Per-pixel Gaussian grain, in intensity units.
    pub grain: f64,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self {
            octaves: 4,
            base_cells: 3,
            persistence: 0.5,
            grain: 0.025,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Inlier pool shared by the train and validation splits.
    pub n_inliers: usize,
    pub n_test_inliers: usize,
    pub n_outliers: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub geometry: CameraGeometry,
    pub object: SizeBounds,
    /// Relative uniform jitter of the implanted panel's side length.
    pub object_jitter: f64,
    pub texture: TextureConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_inliers: 400,
            n_test_inliers: 500,
            n_outliers: 12,
            val_fraction: 0.3,
            seed: 0,
            height: 64,
            width: 80,
            geometry: CameraGeometry::default(),
            object: SizeBounds::default(),
            object_jitter: 0.1,
            texture: TextureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Habitat {
    Sand,
    Seagrass,
    Rock,
}

/// Smooth lattice noise in `[0, 1]`, tileable only by accident.
struct ValueNoise {
    cells: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut impl Rng, cells: usize) -> Self {
        let n = cells + 2;
        Self {
            cells,
            lattice: (0..n * n).map(|_| rng.random::<f64>()).collect(),
        }
    }

    /// `u, v` in `[0, 1]`.
    fn at(&self, u: f64, v: f64) -> f64 {
        let n = self.cells + 2;
        let (x, y) = (
            u.clamp(0.0, 1.0) * self.cells as f64,
            v.clamp(0.0, 1.0) * self.cells as f64,
        );
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (fx, fy) = (s(x - x0 as f64), s(y - y0 as f64));
        let l = |i: usize, j: usize| self.lattice[j * n + i];
        let top = l(x0, y0) * (1.0 - fx) + l(x0 + 1, y0) * fx;
        let bottom = l(x0, y0 + 1) * (1.0 - fx) + l(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

struct Fractal(Vec<(ValueNoise, f64)>);

impl Fractal {
    fn new(rng: &mut impl Rng, cfg: &TextureConfig) -> Self {
        let mut amp = 1.0;
        let mut layers = Vec::with_capacity(cfg.octaves);
        for o in 0..cfg.octaves {
            layers.push((ValueNoise::new(rng, cfg.base_cells << o), amp));
            amp *= cfg.persistence;
        }
        Self(layers)
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let total: f64 = self.0.iter().map(|(_, a)| a).sum();
        self.0.iter().map(|(n, a)| n.at(u, v) * a).sum::<f64>() / total
    }
}

/// Generates one inlier texture.
pub fn habitat_texture(
    rng: &mut impl Rng,
    habitat: Habitat,
    height: usize,
    width: usize,
    cfg: &TextureConfig,
) -> Vec<[f64; 3]> {
    let fractal = Fractal::new(rng, cfg);
    let detail = Fractal::new(
        rng,
        &TextureConfig {
            base_cells: cfg.base_cells * 4,
            ..*cfg
        },
    );
    let theta = rng.random_range(0.0..PI);
    let (ct, st) = (theta.cos(), theta.sin());
    let exposure = rng.random_range(0.85..1.1);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.95..1.05));
    let freq = rng.random_range(0.08..0.14);
    let (base, aspect) = match habitat {
        Habitat::Sand => ([0.74, 0.67, 0.49], 1.0),
        Habitat::Seagrass => ([0.24, 0.36, 0.20], 0.25),
        Habitat::Rock => ([0.45, 0.43, 0.41], 1.0),
    };
    let grain = Normal::new(0.0, cfg.grain.max(1e-12)).expect("positive grain");
    let scale = width.max(height) as f64;
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / scale, y as f64 / scale);
            // Rotated, optionally stretched coordinates for directional texture.
            let (a, b) = (u * ct + v * st, -u * st + v * ct);
            let low = fractal.at(u, v);
            let intensity = match habitat {
                Habitat::Sand => {
                    let ripple = (2.0 * PI * freq * (a * scale) + 4.0 * low).sin();
                    0.85 + 0.08 * ripple + 0.25 * (low - 0.5)
                }
                Habitat::Seagrass => {
                    let streak = detail.at((a * aspect).rem_euclid(1.0), b.rem_euclid(1.0));
                    0.55 + 0.7 * streak + 0.3 * (low - 0.5)
                }
                Habitat::Rock => {
                    let blotch = 1.0 / (1.0 + (-(low - 0.5) * 12.0).exp());
                    0.55 + 0.7 * blotch + 0.2 * (detail.at(u, v) - 0.5)
                }
            };
            let (dx, dy) = (
                x as f64 / width as f64 - 0.5,
                y as f64 / height as f64 - 0.5,
            );
            let vignette = 1.0 - 0.35 * (dx * dx + dy * dy);
            let g = grain.sample(rng);
            out.push(std::array::from_fn(|c| {
                (base[c] * tint[c] * intensity * exposure * vignette + g).clamp(0.0, 1.0)
            }));
        }
    }
    out
}

/// Pixels whose centres fall inside the convex polygon `corners`
/// (`(row, col)`, consistently wound).
fn fill_convex(corners: &[(f64, f64); 4], height: usize, width: usize) -> Vec<(usize, usize)> {
    let inside = |r: f64, c: f64| {
        let mut sign = 0.0f64;
        for k in 0..4 {
            let (a, b) = (corners[k], corners[(k + 1) % 4]);
            let cross = (b.0 - a.0) * (c - a.1) - (b.1 - a.1) * (r - a.0);
            if cross != 0.0 {
                if sign == 0.0 {
                    sign = cross.signum();
                } else if cross.signum() != sign {
                    return false;
                }
            }
        }
        true
    };
    let mut px = Vec::new();
    for r in 0..height {
        for c in 0..width {
            if inside(r as f64 + 0.5, c as f64 + 0.5) {
                px.push((r, c));
            }
        }
    }
    px
}

/// Implants a bright quadrilateral panel and returns its inclusive bbox.
pub fn implant_panel(
    rng: &mut impl Rng,
    pixels: &mut [[f64; 3]],
    height: usize,
    width: usize,
    side_px: f64,
    area_bounds: (f64, f64),
) -> Result<[usize; 4]> {
    for _ in 0..1000 {
        let side = side_px;
        let half = side / 2.0;
        let reach = half * std::f64::consts::SQRT_2 + 2.0;
        if 2.0 * reach >= height.min(width) as f64 {
            return Err(Error::invalid(format!(
                "panel of side {side:.1} px does not fit a {height}x{width} image"
            )));
        }
        let cr = rng.random_range(reach..height as f64 - reach);
        let cc = rng.random_range(reach..width as f64 - reach);
        let theta = rng.random_range(0.0..PI / 2.0);
        let corners: [(f64, f64); 4] = std::array::from_fn(|k| {
            let ang = theta + k as f64 * PI / 2.0 + PI / 4.0;
            let jitter = side * 0.08;
            (
                cr + half * std::f64::consts::SQRT_2 * ang.sin()
                    + rng.random_range(-jitter..jitter),
                cc + half * std::f64::consts::SQRT_2 * ang.cos()
                    + rng.random_range(-jitter..jitter),
            )
        });
        let filled = fill_convex(&corners, height, width);
        let area = filled.len() as f64;
        if area < area_bounds.0 || area > area_bounds.1 {
            continue;
        }
        let colour: [f64; 3] = [
            rng.random_range(0.9..0.97),
            rng.random_range(0.88..0.95),
            rng.random_range(0.78..0.88),
        ];
        let shade = Normal::new(0.0, 0.015).expect("positive");
        let mut bbox = [usize::MAX, usize::MAX, 0, 0];
        for (r, c) in filled {
            let s = shade.sample(rng);
            pixels[r * width + c] = std::array::from_fn(|k| (colour[k] + s).clamp(0.0, 1.0));
            bbox = [
                bbox[0].min(r),
                bbox[1].min(c),
                bbox[2].max(r),
                bbox[3].max(c),
            ];
        }
        return Ok(bbox);
    }
    Err(Error::invalid(
        "could not place a panel inside the pixel-area bounds",
    ))
}

fn to_rgb(pixels: &[[f64; 3]], height: usize, width: usize) -> RgbImage {
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let p = pixels[y as usize * width + x as usize];
        image::Rgb(p.map(|v| (v * 255.0).round() as u8))
    })
}

/// Writes PNGs under `out_dir/images` plus `out_dir/manifest.ndjson`.
///
/// The same config and seed give byte-identical files.
pub fn synth_dataset(config: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.geometry.validate()?;
    if !(0.0..1.0).contains(&config.val_fraction) {
        return Err(Error::invalid(format!(
            "val_fraction must lie in [0, 1), got {}",
            config.val_fraction
        )));
    }
    let geometry = CameraGeometry {
        width_px: config.width,
        height_px: config.height,
        ..config.geometry
    };
    let bounds = pixel_bounds(&geometry, &config.object)?;
    let side_px =
        (config.object.min_side_m * config.object.max_side_m).sqrt() * geometry.pixels_per_metre();
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir)?;

    let n_val = (config.n_inliers as f64 * config.val_fraction).round() as usize;
    let mut plan: Vec<(Split, Label)> = Vec::new();
    plan.extend((0..config.n_inliers - n_val).map(|_| (Split::Train, Label::Inlier)));
    plan.extend((0..n_val).map(|_| (Split::Val, Label::Inlier)));
    let mut test: Vec<Label> = (0..config.n_test_inliers).map(|_| Label::Inlier).collect();
    test.extend((0..config.n_outliers).map(|_| Label::Outlier));
    test.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x7e57));
    plan.extend(test.into_iter().map(|l| (Split::Test, l)));

    let mut images = Vec::with_capacity(plan.len());
    for (i, (split, label)) in plan.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64 + 1);
        let habitat = [Habitat::Sand, Habitat::Seagrass, Habitat::Rock][rng.random_range(0..3)];
        let mut pixels = habitat_texture(
            &mut rng,
            habitat,
            config.height,
            config.width,
            &config.texture,
        );
        let bbox = if label == Label::Outlier {
            let jittered =
                side_px * rng.random_range(1.0 - config.object_jitter..=1.0 + config.object_jitter);
            Some(implant_panel(
                &mut rng,
                &mut pixels,
                config.height,
                config.width,
                jittered,
                (bounds.min_px, bounds.max_px),
            )?)
        } else {
            None
        };
        let id = format!("img-{i:05}");
        let rel = format!("images/{id}.png");
        to_rgb(&pixels, config.height, config.width)
            .save(out_dir.join(&rel))
            .map_err(|source| Error::Image {
                path: rel.clone().into(),
                source,
            })?;
        images.push(ImageRecord {
            id,
            path: rel,
            label,
            altitude_m: geometry.altitude_m,
            split,
            bbox,
            operator_label: None,
        });
    }
    let manifest = DatasetManifest {
        header: ManifestHeader {
            version: MANIFEST_VERSION,
            source: Source::Synthetic,
            seed: config.seed,
            geometry,
            image_shape: [3, config.height, config.width],
        },
        images,
        skipped: Vec::new(),
    };
    manifest.validate()?;
    manifest.save(out_dir.join("manifest.ndjson"))?;
    Ok(manifest)
}
