use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use seavae::pipeline::{
    detect, evaluate, ingest, sweep_csv, sweep_latent_dim, synth_dataset, train_on_manifest,
    write_file, write_visuals, DatasetManifest, DetectionRun, DetectorMode, Thresholds, Truth,
};
use seavae::vae::Checkpoint;
use seavae_cli::config::RunConfig;
use seavae_cli::server::{serve, AppState};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "seavae",
    version,
    about = "Seafloor image anomaly detection with a variational autoencoder"
)]
struct Cli {
    /// Seed applied to every stage (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file with [synth], [ingest], [train] and [detect] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic seafloor dataset with implanted panels.
    Synth {
        #[arg(long)]
        n_inliers: Option<usize>,
        #[arg(long)]
        n_test_inliers: Option<usize>,
        #[arg(long)]
        n_outliers: Option<usize>,
    },
    /// Validate, resize and split a directory of PNG/JPEG images.
    Ingest {
        input: PathBuf,
        /// Sidecar CSV with columns file,label[,altitude_m].
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train a VAE on the manifest's train/val splits.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        latent_dim: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Score the test split and write detection records.
    Detect {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        density_percentile: Option<f64>,
        #[arg(long)]
        roi_percentile: Option<f64>,
        /// Density 80th / ROI 95th percentile preset.
        #[arg(long, conflicts_with_all = ["density_percentile", "roi_percentile"])]
        high_precision: bool,
        /// Also write reconstructions and heatmaps.
        #[arg(long)]
        visuals: bool,
    },
    /// Precision, recall, F1 and AP of a records file.
    Eval {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::All)]
        mode: ModeArg,
        /// Score against operator labels instead of dataset labels.
        #[arg(long)]
        operator: bool,
    },
    /// Train and evaluate one model per latent dimension.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "8,16,32,64,128,256,512,1024,2048"
        )]
        dims: Vec<usize>,
    },
    /// Serve the review API over a records file.
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        records: PathBuf,
        /// Enables the reconstruction and heatmap endpoints.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Clustering,
    Roi,
    Joint,
    All,
}

impl ModeArg {
    fn modes(self) -> Vec<DetectorMode> {
        match self {
            ModeArg::Clustering => vec![DetectorMode::Clustering],
            ModeArg::Roi => vec![DetectorMode::Roi],
            ModeArg::Joint => vec![DetectorMode::Joint],
            ModeArg::All => DetectorMode::ALL.to_vec(),
        }
    }
}

#[derive(Serialize)]
struct MetricsRow {
    mode: DetectorMode,
    precision: f64,
    recall: f64,
    f1: f64,
    average_precision: Option<f64>,
    tp: usize,
    fp: usize,
    tn: usize,
    #[serde(rename = "fn")]
    fn_: usize,
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    write_file(path, &w.into_inner()?)?;
    Ok(())
}

fn load_manifest(path: &Path) -> anyhow::Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = cli.out;
    std::fs::create_dir_all(&out)?;
    match cli.command {
        Command::Synth {
            n_inliers,
            n_test_inliers,
            n_outliers,
        } => {
            let mut s = cfg.synth;
            s.n_inliers = n_inliers.unwrap_or(s.n_inliers);
            s.n_test_inliers = n_test_inliers.unwrap_or(s.n_test_inliers);
            s.n_outliers = n_outliers.unwrap_or(s.n_outliers);
            let m = synth_dataset(&s, &out)?;
            println!(
                "wrote {} images to {}",
                m.images.len(),
                out.join("manifest.ndjson").display()
            );
        }
        Command::Ingest { input, labels } => {
            let mut opts = cfg.ingest;
            if labels.is_some() {
                opts.labels_csv = labels;
            }
            let m = ingest(&input, &out, &opts)?;
            for s in &m.skipped {
                log::warn!("skipped {}: {}", s.path, s.reason);
            }
            println!(
                "ingested {} images ({} skipped)",
                m.images.len(),
                m.skipped.len()
            );
        }
        Command::Train {
            manifest,
            latent_dim,
            max_epochs,
        } => {
            let m = load_manifest(&manifest)?;
            let mut vc = cfg.train;
            vc.latent_dim = latent_dim.unwrap_or(vc.latent_dim);
            vc.max_epochs = max_epochs.unwrap_or(vc.max_epochs);
            let ck = train_on_manifest::<f32>(&m, &manifest, &vc)?;
            ck.save(out.join("model.vaeckpt"))?;
            write_csv(&out.join("history.csv"), &ck.history)?;
            println!(
                "best validation loss {:.4} after {} epochs",
                ck.best_val_loss().unwrap_or(f64::NAN),
                ck.history.len()
            );
        }
        Command::Detect {
            manifest,
            checkpoint,
            density_percentile,
            roi_percentile,
            high_precision,
            visuals,
        } => {
            let m = load_manifest(&manifest)?;
            let ck = Checkpoint::<f32>::load(&checkpoint)?;
            let mut dc = cfg.detect;
            if high_precision {
                dc.thresholds = Thresholds::HIGH_PRECISION;
            }
            dc.thresholds.density_percentile =
                density_percentile.unwrap_or(dc.thresholds.density_percentile);
            dc.thresholds.roi_percentile = roi_percentile.unwrap_or(dc.thresholds.roi_percentile);
            let run = detect(&m, &manifest, &ck, &dc)?;
            run.save(out.join("records.ndjson"))?;
            write_file(&out.join("embedding.csv"), &run.embedding_csv()?)?;
            if visuals {
                write_visuals(&m, &manifest, &ck, &out.join("visuals"), dc.batch_size)?;
            }
            let joint = run.records.iter().filter(|r| r.joint_flag).count();
            println!("scored {} images, {joint} flagged", run.records.len());
        }
        Command::Eval {
            records,
            mode,
            operator,
        } => {
            let run = DetectionRun::load(&records)?;
            let truth = if operator {
                Truth::Operator
            } else {
                Truth::Dataset
            };
            let mut rows = Vec::new();
            let mut reports = serde_json::Map::new();
            for mode in mode.modes() {
                let r = evaluate(&run.records, mode, truth)?;
                println!(
                    "{:<10} precision {:.3}  recall {:.3}  f1 {:.3}  ap {}",
                    mode.name(),
                    r.precision,
                    r.recall,
                    r.f1,
                    r.average_precision
                        .map_or("n/a".into(), |a| format!("{a:.3}"))
                );
                rows.push(MetricsRow {
                    mode,
                    precision: r.precision,
                    recall: r.recall,
                    f1: r.f1,
                    average_precision: r.average_precision,
                    tp: r.counts.tp,
                    fp: r.counts.fp,
                    tn: r.counts.tn,
                    fn_: r.counts.fn_,
                });
                reports.insert(mode.name().into(), serde_json::to_value(&r)?);
            }
            write_csv(&out.join("metrics.csv"), &rows)?;
            write_file(
                &out.join("eval.json"),
                &serde_json::to_vec_pretty(&reports)?,
            )?;
        }
        Command::Sweep { manifest, dims } => {
            let m = load_manifest(&manifest)?;
            let rows = sweep_latent_dim::<f32>(&dims, &m, &manifest, &cfg.train, &cfg.detect)?;
            write_file(&out.join("sweep.csv"), &sweep_csv(&rows)?)?;
            println!(
                "wrote {} rows to {}",
                rows.len(),
                out.join("sweep.csv").display()
            );
        }
        Command::Serve {
            manifest,
            records,
            checkpoint,
            bind,
        } => {
            let state = AppState::open(&manifest, &records, checkpoint.as_deref())?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, &bind))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
