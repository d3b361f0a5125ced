use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::images::{load_split, tensor_to_rgb};
use super::manifest::{DatasetManifest, Label, Split};
use crate::error::{Error, Result};
use crate::latent::{
    dbscan, kde_fit, kde_score, log_grid, percentile_flag, tsne_reduce, DbscanParams, Direction,
    EmbeddingSet, PointRole, TsneConfig,
};
use crate::nn::Tensor;
use crate::roi::{
    analyze, calibrate_threshold, heatmap, pixel_bounds, AnomalyHeatmap, BBox, RoiConfig,
    SizeBounds, ThresholdRule,
};
use crate::scalar::Scalar;
use crate::vae::{Checkpoint, Vae};

pub const RECORDS_VERSION: u32 = 1;

/// Percentile gates of the two-stage detector.
///
/// `density_percentile = p` flags the `100 - p` percent of images with the
/// lowest density; `roi_percentile = q` flags images whose ROI score exceeds
/// the `q`-th percentile. A value of 0 disables the gate (every image
/// passes) and 100 flags nothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub density_percentile: f64,
    pub roi_percentile: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            density_percentile: 80.0,
            roi_percentile: 80.0,
        }
    }
}

impl Thresholds {
    /// Density 80th, ROI 95th: trades recall for precision.
    pub const HIGH_PRECISION: Thresholds = Thresholds {
        density_percentile: 80.0,
        roi_percentile: 95.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("density_percentile", self.density_percentile),
            ("roi_percentile", self.roi_percentile),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 100], got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn gate(scores: &[f64], p: f64, direction: Direction) -> Result<Vec<bool>> {
    if p <= 0.0 {
        return Ok(vec![true; scores.len()]);
    }
    if p >= 100.0 || scores.is_empty() {
        return Ok(vec![false; scores.len()]);
    }
    let q = match direction {
        Direction::Below => 100.0 - p,
        Direction::Above => p,
    };
    Ok(percentile_flag(scores, q, direction)?.flags)
}

/// `(density_flags, roi_flags)` for the given gates.
pub fn gate_flags(
    density: &[f64],
    roi: &[f64],
    thresholds: Thresholds,
) -> Result<(Vec<bool>, Vec<bool>)> {
    thresholds.validate()?;
    Ok((
        gate(density, thresholds.density_percentile, Direction::Below)?,
        gate(roi, thresholds.roi_percentile, Direction::Above)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiSummary {
    pub area_px: usize,
    pub centroid: (f64, f64),
    pub bbox: BBox,
}

/// Scores and flags of one test image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub id: String,
    pub label: Label,
    pub operator_label: Option<Label>,
    pub model_id: String,
    pub l2_score: f64,
    pub embedding: [f64; 2],
    pub density: f64,
    pub density_flag: bool,
    pub roi_score: f64,
    pub roi_flag: bool,
    pub joint_flag: bool,
    /// Highest-scoring surviving region, if any.
    pub roi: Option<RoiSummary>,
    /// DBSCAN cluster in the 2-D embedding; `None` for noise.
    pub cluster: Option<usize>,
    pub role: Option<PointRole>,
}

impl DetectionRecord {
    /// The operator's label when present, else the dataset label.
    pub fn effective_label(&self) -> Label {
        self.operator_label.unwrap_or(self.label)
    }
}

/// Recomputes every record's flags from its cached scores.
pub fn apply_thresholds(records: &mut [DetectionRecord], thresholds: Thresholds) -> Result<()> {
    let density: Vec<f64> = records.iter().map(|r| r.density).collect();
    let roi: Vec<f64> = records.iter().map(|r| r.roi_score).collect();
    let (df, rf) = gate_flags(&density, &roi, thresholds)?;
    for ((r, d), q) in records.iter_mut().zip(df).zip(rf) {
        r.density_flag = d;
        r.roi_flag = q;
        r.joint_flag = d && q;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KdeSettings {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_len: usize,
    pub folds: usize,
}

impl Default for KdeSettings {
    fn default() -> Self {
        Self {
            grid_min: 1e-2,
            grid_max: 1e1,
            grid_len: 30,
            folds: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub thresholds: Thresholds,
    pub tsne: TsneConfig,
    pub kde: KdeSettings,
    pub roi: RoiConfig,
    pub object: SizeBounds,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            tsne: TsneConfig::default(),
            kde: KdeSettings::default(),
            roi: RoiConfig {
                threshold: ThresholdRule::Calibrated { quantile: 99.0 },
                ..Default::default()
            },
            object: SizeBounds::default(),
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub version: u32,
    pub model_id: String,
    pub thresholds: Thresholds,
    pub bandwidth: f64,
    pub perplexity: f64,
    pub dbscan: Option<DbscanParams>,
    /// Binarization threshold used by the ROI stage, when it is a constant.
    #[serde(default)]
    pub roi_threshold: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RunLine {
    Header(RunHeader),
    Record(DetectionRecord),
}

/// Output of [`detect`]: header plus one record per test image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRun {
    pub header: RunHeader,
    pub records: Vec<DetectionRecord>,
}

impl DetectionRun {
    pub fn to_ndjson(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        serde_json::to_writer(&mut out, &RunLine::Header(self.header.clone()))?;
        out.push(b'\n');
        for r in &self.records {
            serde_json::to_writer(&mut out, &RunLine::Record(r.clone()))?;
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn from_ndjson(reader: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut records = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)
                .map_err(|e| Error::Manifest(format!("records line {}: {e}", n + 1)))?
            {
                RunLine::Header(h) if header.is_none() => header = Some(h),
                RunLine::Header(_) => {
                    return Err(Error::Manifest(format!(
                        "records line {}: second header",
                        n + 1
                    )))
                }
                RunLine::Record(r) => records.push(r),
            }
        }
        let header = header.ok_or_else(|| Error::Manifest("records file has no header".into()))?;
        if header.version != RECORDS_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported records version {}",
                header.version
            )));
        }
        Ok(Self { header, records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_ndjson(BufReader::new(fs::File::open(path)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("ndjson.tmp");
        fs::write(&tmp, self.to_ndjson()?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// `id,x,y,density,cluster,role` rows.
    pub fn embedding_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "x", "y", "density", "cluster", "role"])?;
        for r in &self.records {
            w.write_record([
                r.id.clone(),
                r.embedding[0].to_string(),
                r.embedding[1].to_string(),
                r.density.to_string(),
                r.cluster
                    .map_or_else(|| "noise".to_string(), |c| c.to_string()),
                r.role
                    .map_or_else(String::new, |role| format!("{role:?}").to_lowercase()),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Stable identifier of a trained model.
pub fn model_id<T: Scalar>(checkpoint: &Checkpoint<T>) -> String {
    format!(
        "vae-d{}-{:08x}",
        checkpoint.config.latent_dim,
        checkpoint.checksum()
    )
}

/// Mean squared error over all pixels and channels.
pub fn l2_score<T: Scalar>(image: &[T], reconstruction: &[T]) -> f64 {
    let n = image.len().max(1) as f64;
    image
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| (a.f64() - b.f64()).powi(2))
        .sum::<f64>()
        / n
}

struct ImageScores {
    mu: Vec<f64>,
    l2: f64,
    roi_score: f64,
    roi: Option<RoiSummary>,
}

fn score_chunk<T: Scalar>(
    model: &Vae<T>,
    images: &Tensor<T>,
    range: std::ops::Range<usize>,
    altitudes: &[f64],
    manifest: &DatasetManifest,
    config: &DetectConfig,
) -> Result<Vec<ImageScores>> {
    let items: Vec<Tensor<T>> = range.clone().map(|i| images.select(i)).collect();
    let refs: Vec<&Tensor<T>> = items.iter().collect();
    let batch = Tensor::stack(&refs)?;
    let codes = model.encode(&batch)?;
    let recon = model.reconstruct(&batch)?;
    let mut out = Vec::with_capacity(items.len());
    for (k, i) in range.enumerate() {
        let geometry = manifest.header.geometry.with_altitude(altitudes[i]);
        let bounds = pixel_bounds(&geometry, &config.object)?;
        let rec = recon.select(k);
        let analysis = analyze(heatmap(&items[k], &rec)?, bounds, &config.roi)?;
        let best = analysis
            .rois
            .iter()
            .max_by(|a, b| a.mean_error.total_cmp(&b.mean_error));
        out.push(ImageScores {
            mu: codes[k].mu.iter().map(|v| v.f64()).collect(),
            l2: l2_score(items[k].data(), rec.data()),
            roi_score: analysis.score,
            roi: best.map(|r| RoiSummary {
                area_px: r.area_px,
                centroid: r.centroid,
                bbox: r.bbox,
            }),
        });
    }
    Ok(out)
}

/// Heatmaps of the validation split, only needed by a calibrated threshold.
fn validation_heatmaps<T: Scalar>(
    model: &Vae<T>,
    manifest: &DatasetManifest,
    manifest_path: &Path,
    rule: ThresholdRule,
    batch_size: usize,
) -> Result<Vec<AnomalyHeatmap<T>>> {
    if !matches!(rule, ThresholdRule::Calibrated { .. }) {
        return Ok(Vec::new());
    }
    let (images, records) = load_split::<T>(manifest, manifest_path, Split::Val)?;
    let mut maps = Vec::with_capacity(records.len());
    for start in (0..records.len()).step_by(batch_size.max(1)) {
        let items: Vec<Tensor<T>> = (start..(start + batch_size.max(1)).min(records.len()))
            .map(|i| images.select(i))
            .collect();
        let recon = model.reconstruct(&Tensor::stack(&items.iter().collect::<Vec<_>>())?)?;
        for (k, item) in items.iter().enumerate() {
            maps.push(heatmap(item, &recon.select(k))?);
        }
    }
    Ok(maps)
}

/// Runs both detector stages over the test split.
///
/// A calibrated ROI threshold is resolved from the validation split first.
///
/// Encoding and ROI scoring are split into fixed-size chunks processed on
/// all available cores; results do not depend on the thread count.
pub fn detect<T: Scalar>(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    checkpoint: &Checkpoint<T>,
    config: &DetectConfig,
) -> Result<DetectionRun> {
    let model = checkpoint.model()?;
    let model_id = model_id(checkpoint);
    let (images, records) = load_split::<T>(manifest, manifest_path, Split::Test)?;
    let n = records.len();
    if n < 10 {
        return Err(Error::invalid(format!(
            "detection needs at least 10 test images, found {n}"
        )));
    }
    let mut config = config.clone();
    config.roi.threshold = calibrate_threshold(
        config.roi.threshold,
        &validation_heatmaps(
            &model,
            manifest,
            manifest_path,
            config.roi.threshold,
            config.batch_size,
        )?,
        config.roi.median_kernel,
    )?;
    let config = &config;
    let altitudes: Vec<f64> = records.iter().map(|r| r.altitude_m).collect();
    let chunk = config.batch_size.max(1);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let threads = std::thread::available_parallelism()
        .map_or(1, |p| p.get())
        .min(starts.len());
    let mut per_chunk: Vec<Option<Result<Vec<ImageScores>>>> =
        (0..starts.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let (model, images, altitudes, starts) = (&model, &images, &altitudes, &starts);
                s.spawn(move || {
                    (t..starts.len())
                        .step_by(threads)
                        .map(|c| {
                            let range = starts[c]..(starts[c] + chunk).min(n);
                            (
                                c,
                                score_chunk(model, images, range, altitudes, manifest, config),
                            )
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (c, r) in h.join().expect("scoring thread panicked") {
                per_chunk[c] = Some(r);
            }
        }
    });
    let mut scores = Vec::with_capacity(n);
    for r in per_chunk {
        scores.extend(r.expect("every chunk scored")?);
    }

    let d = model.latent_dim();
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let latent = EmbeddingSet::new(
        d,
        scores.iter().flat_map(|s| s.mu.iter().copied()).collect(),
        ids,
    )?;
    let max_perplexity = (n as f64 / 3.0) * 0.99;
    let mut tsne_cfg = config.tsne;
    if tsne_cfg.perplexity >= max_perplexity {
        log::warn!(
            "perplexity {} too large for {n} points; using {max_perplexity:.2}",
            tsne_cfg.perplexity
        );
        tsne_cfg.perplexity = max_perplexity;
    }
    let embedded = tsne_reduce(&latent, &tsne_cfg)?.embedding;
    let grid = log_grid(
        config.kde.grid_min,
        config.kde.grid_max,
        config.kde.grid_len,
    );
    let kde = kde_fit(&embedded, &grid, config.kde.folds.min(n), config.seed)?;
    let density = kde_score(&kde, &embedded)?;
    let (params, clusters) = match DbscanParams::heuristic(&embedded) {
        Ok((p, _)) => (Some(p), Some(dbscan(&embedded, p)?)),
        Err(e) => {
            log::warn!("DBSCAN diagnostic skipped: {e}");
            (None, None)
        }
    };

    let mut out: Vec<DetectionRecord> = records
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (rec, s))| DetectionRecord {
            id: rec.id.clone(),
            label: rec.label,
            operator_label: rec.operator_label,
            model_id: model_id.clone(),
            l2_score: s.l2,
            embedding: [embedded.point(i)[0], embedded.point(i)[1]],
            density: density[i],
            density_flag: false,
            roi_score: s.roi_score,
            roi_flag: false,
            joint_flag: false,
            roi: s.roi,
            cluster: clusters.as_ref().and_then(|c| c.labels[i]),
            role: clusters.as_ref().map(|c| c.roles[i]),
        })
        .collect();
    apply_thresholds(&mut out, config.thresholds)?;
    Ok(DetectionRun {
        header: RunHeader {
            version: RECORDS_VERSION,
            model_id,
            thresholds: config.thresholds,
            bandwidth: kde.bandwidth,
            perplexity: tsne_cfg.perplexity,
            dbscan: params,
            roi_threshold: match config.roi.threshold {
                ThresholdRule::Fixed { value } => Some(value),
                _ => None,
            },
        },
        records: out,
    })
}

/// Writes `<id>_recon.png` and `<id>_heatmap.png` for every test image.
pub fn write_visuals<T: Scalar>(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    checkpoint: &Checkpoint<T>,
    out_dir: &Path,
    batch_size: usize,
) -> Result<()> {
    let model = checkpoint.model()?;
    let (images, records) = load_split::<T>(manifest, manifest_path, Split::Test)?;
    fs::create_dir_all(out_dir)?;
    for start in (0..records.len()).step_by(batch_size.max(1)) {
        let end = (start + batch_size.max(1)).min(records.len());
        let items: Vec<Tensor<T>> = (start..end).map(|i| images.select(i)).collect();
        let batch = Tensor::stack(&items.iter().collect::<Vec<_>>())?;
        let recon = model.reconstruct(&batch)?;
        for (k, i) in (start..end).enumerate() {
            let rec = recon.select(k);
            let id = &records[i].id;
            let save = |img: image::DynamicImage, suffix: &str| -> Result<()> {
                let path = out_dir.join(format!("{id}_{suffix}.png"));
                img.save(&path).map_err(|source| Error::Image {
                    path: path.to_path_buf(),
                    source,
                })
            };
            save(tensor_to_rgb(&rec).into(), "recon")?;
            save(heatmap(&items[k], &rec)?.to_gray_image().into(), "heatmap")?;
        }
    }
    Ok(())
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::File::create(path)?.write_all(bytes)?;
    Ok(())
}
