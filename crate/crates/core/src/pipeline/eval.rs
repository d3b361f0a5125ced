use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detect::{detect, DetectConfig, DetectionRecord};
use super::images::load_split;
use super::manifest::{DatasetManifest, Label, Split};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::scalar::Scalar;
use crate::vae::{train, Checkpoint, TrainData, VaeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorMode {
    /// Density gate alone.
    Clustering,
    /// ROI gate alone.
    Roi,
    /// Both gates.
    Joint,
}

impl DetectorMode {
    pub const ALL: [DetectorMode; 3] = [
        DetectorMode::Clustering,
        DetectorMode::Roi,
        DetectorMode::Joint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorMode::Clustering => "clustering",
            DetectorMode::Roi => "roi",
            DetectorMode::Joint => "joint",
        }
    }

    pub fn flag(self, r: &DetectionRecord) -> bool {
        match self {
            DetectorMode::Clustering => r.density_flag,
            DetectorMode::Roi => r.roi_flag,
            DetectorMode::Joint => r.joint_flag,
        }
    }

    /// Ranking score for the precision-recall curve. The joint score is the
    /// ROI score of density-flagged images and 0 elsewhere.
    pub fn score(self, r: &DetectionRecord) -> f64 {
        match self {
            DetectorMode::Clustering => -r.density,
            DetectorMode::Roi => r.roi_score,
            DetectorMode::Joint => {
                if r.density_flag {
                    r.roi_score
                } else {
                    0.0
                }
            }
        }
    }
}

/// Which label counts as ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truth {
    /// The dataset label.
    Dataset,
    /// Operator labels only; records without one are skipped.
    Operator,
}

/// Metrics of `mode` over records that carry a label under `truth`.
pub fn evaluate(
    records: &[DetectionRecord],
    mode: DetectorMode,
    truth: Truth,
) -> Result<EvalReport> {
    let labeled: Vec<(&DetectionRecord, bool)> = records
        .iter()
        .filter_map(|r| {
            let label = match truth {
                Truth::Dataset => r.label,
                Truth::Operator => r.operator_label.unwrap_or(Label::Unlabeled),
            };
            label.is_outlier().map(|o| (r, o))
        })
        .collect();
    if labeled.is_empty() {
        return Err(Error::Empty("labeled records"));
    }
    let flags: Vec<bool> = labeled.iter().map(|(r, _)| mode.flag(r)).collect();
    let scores: Vec<f64> = labeled.iter().map(|(r, _)| mode.score(r)).collect();
    let truth_v: Vec<bool> = labeled.iter().map(|(_, t)| *t).collect();
    EvalReport::new(
        &flags,
        &scores,
        &truth_v,
        serde_json::json!({ "mode": mode.name(), "truth": truth }),
    )
}

/// Sturges' bin count `ceil(log2 n) + 1` for a sample of size `n`.
pub fn sturges_bins(n: usize) -> usize {
    (n.max(1) as f64).log2().ceil() as usize + 1
}

/// Overlap coefficient `sum_k min(p_k, q_k)` of two samples' normalized
/// histograms over `bins` equal-width bins spanning both samples.
pub fn overlap_coefficient(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if a.is_empty() || b.is_empty() || bins == 0 {
        return Err(Error::Empty("overlap coefficient samples"));
    }
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(1.0);
    }
    let hist = |xs: &[f64]| {
        let mut h = vec![0.0; bins];
        for x in xs {
            let k = (((x - lo) / (hi - lo)) * bins as f64) as usize;
            h[k.min(bins - 1)] += 1.0 / xs.len() as f64;
        }
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    Ok(ha.iter().zip(&hb).map(|(p, q)| p.min(*q)).sum())
}

/// Trains on the manifest's train and validation splits.
pub fn train_on_manifest<T: Scalar>(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    config: &VaeConfig,
) -> Result<Checkpoint<T>> {
    let (train_images, _) = load_split::<T>(manifest, manifest_path, Split::Train)?;
    let (val_images, _) = load_split::<T>(manifest, manifest_path, Split::Val)?;
    train(
        &TrainData {
            train: train_images,
            val: val_images,
        },
        config,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub latent_dim: usize,
    pub mode: DetectorMode,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub average_precision: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Trains one model per latent size (same seed) and evaluates all three
/// detector modes.
pub fn sweep_latent_dim<T: Scalar>(
    dims: &[usize],
    manifest: &DatasetManifest,
    manifest_path: &Path,
    vae: &VaeConfig,
    detect_cfg: &DetectConfig,
) -> Result<Vec<SweepRow>> {
    if dims.is_empty() {
        return Err(Error::invalid("latent sweep needs at least one dimension"));
    }
    let mut rows = Vec::new();
    for &d in dims {
        log::info!("sweep: training latent_dim = {d}");
        let ck = train_on_manifest::<T>(manifest, manifest_path, &vae.clone().with_latent_dim(d))?;
        let run = detect(manifest, manifest_path, &ck, detect_cfg)?;
        for mode in DetectorMode::ALL {
            let rep = evaluate(&run.records, mode, Truth::Dataset)?;
            rows.push(SweepRow {
                latent_dim: d,
                mode,
                precision: rep.precision,
                recall: rep.recall,
                f1: rep.f1,
                average_precision: rep.average_precision,
                tp: rep.counts.tp,
                fp: rep.counts.fp,
                tn: rep.counts.tn,
                fn_: rep.counts.fn_,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// CSV of records: scores, flags and labels.
pub fn records_csv(records: &[DetectionRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "id",
        "label",
        "operator_label",
        "l2_score",
        "x",
        "y",
        "density",
        "density_flag",
        "roi_score",
        "roi_flag",
        "joint_flag",
        "model_id",
    ])?;
    for r in records {
        w.write_record([
            r.id.clone(),
            r.label.to_string(),
            r.operator_label.map_or_else(String::new, |l| l.to_string()),
            r.l2_score.to_string(),
            r.embedding[0].to_string(),
            r.embedding[1].to_string(),
            r.density.to_string(),
            r.density_flag.to_string(),
            r.roi_score.to_string(),
            r.roi_flag.to_string(),
            r.joint_flag.to_string(),
            r.model_id.clone(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
