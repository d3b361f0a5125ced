use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{
    DatasetManifest, ImageRecord, Label, ManifestHeader, SkippedFile, Source, Split,
    MANIFEST_VERSION,
};
use crate::error::{Error, Result};
use crate::roi::CameraGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    pub height: usize,
    pub width: usize,
    /// Optional CSV with columns `file,label[,altitude_m]`.
    pub labels_csv: Option<PathBuf>,
    pub geometry: CameraGeometry,
    /// Fractions of inlier/unlabeled images assigned to train and val; the
    /// rest, plus every outlier, goes to test.
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            height: 64,
            width: 80,
            labels_csv: None,
            geometry: CameraGeometry::default(),
            train_fraction: 0.49,
            val_fraction: 0.21,
            seed: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
struct SidecarRow {
    file: String,
    label: String,
    #[serde(default)]
    altitude_m: Option<f64>,
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Validates and resizes every PNG/JPEG in `input`, writing copies under
/// `out_dir/images` and a manifest at `out_dir/manifest.ndjson`.
///
/// Unreadable files are recorded as skip entries. Outliers always land in
/// the test split.
pub fn ingest(input: &Path, out_dir: &Path, options: &IngestOptions) -> Result<DatasetManifest> {
    let mut files: Vec<PathBuf> = fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!(
            "no PNG or JPEG images in {}",
            input.display()
        )));
    }
    let mut sidecar: HashMap<String, SidecarRow> = HashMap::new();
    if let Some(csv_path) = &options.labels_csv {
        for row in csv::Reader::from_path(csv_path)?.deserialize() {
            let row: SidecarRow = row?;
            sidecar.insert(row.file.clone(), row);
        }
    }
    let geometry = CameraGeometry {
        width_px: options.width,
        height_px: options.height,
        ..options.geometry
    };
    geometry.validate()?;
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir)?;

    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for path in &files {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let img = match image::open(path) {
            Ok(img) => img.to_rgb8(),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push(SkippedFile {
                    path: name,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let resized = image::imageops::resize(
            &img,
            options.width as u32,
            options.height as u32,
            FilterType::Triangle,
        );
        let id = Path::new(&name)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&name)
            .to_string();
        let rel = format!("images/{id}.png");
        resized
            .save(out_dir.join(&rel))
            .map_err(|source| Error::Image {
                path: rel.clone().into(),
                source,
            })?;
        let (label, altitude) = match sidecar.get(&name) {
            Some(row) => (
                row.label.parse()?,
                row.altitude_m.unwrap_or(geometry.altitude_m),
            ),
            None => (Label::Unlabeled, geometry.altitude_m),
        };
        images.push(ImageRecord {
            id,
            path: rel,
            label,
            altitude_m: altitude,
            split: Split::Test,
            bbox: None,
            operator_label: None,
        });
    }

    let mut pool: Vec<usize> = (0..images.len())
        .filter(|&i| images[i].label != Label::Outlier)
        .collect();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(options.seed));
    let n_train = (pool.len() as f64 * options.train_fraction).round() as usize;
    let n_val = (pool.len() as f64 * options.val_fraction).round() as usize;
    for (k, &i) in pool.iter().enumerate() {
        images[i].split = if k < n_train {
            Split::Train
        } else if k < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let manifest = DatasetManifest {
        header: ManifestHeader {
            version: MANIFEST_VERSION,
            source: Source::Ingested,
            seed: options.seed,
            geometry,
            image_shape: [3, options.height, options.width],
        },
        images,
        skipped,
    };
    manifest.validate()?;
    manifest.save(out_dir.join("manifest.ndjson"))?;
    Ok(manifest)
}
