//! Dataset handling, the two-stage detector, evaluation and sweeps.

mod detect;
mod eval;
mod images;
mod ingest;
mod manifest;
mod synth;

pub use detect::{
    apply_thresholds, detect, gate_flags, l2_score, model_id, write_file, write_visuals,
    DetectConfig, DetectionRecord, DetectionRun, KdeSettings, RoiSummary, RunHeader, Thresholds,
    RECORDS_VERSION,
};
pub use eval::{
    evaluate, overlap_coefficient, records_csv, sturges_bins, sweep_csv, sweep_latent_dim,
    train_on_manifest, DetectorMode, SweepRow, Truth,
};
pub use images::{load_image, load_split, rgb_to_tensor, tensor_to_rgb};
pub use ingest::{ingest, IngestOptions};
pub use manifest::{
    resolve, DatasetManifest, ImageRecord, Label, ManifestHeader, SkippedFile, Source, Split,
    MANIFEST_VERSION,
};
pub use synth::{
    habitat_texture, implant_panel, synth_dataset, Habitat, SynthConfig, TextureConfig,
};
