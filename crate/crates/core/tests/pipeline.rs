use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seavae::pipeline::{
    apply_thresholds, detect, evaluate, implant_panel, ingest, load_split, synth_dataset,
    write_visuals, DatasetManifest, DetectConfig, DetectionRun, DetectorMode, IngestOptions, Label,
    Split, SynthConfig, Thresholds, Truth,
};
use seavae::roi::{pixel_bounds, CameraGeometry, SizeBounds};
use seavae::vae::{train, Checkpoint, TrainData, VaeConfig};

fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        n_inliers: 24,
        n_test_inliers: 30,
        n_outliers: 4,
        seed,
        ..Default::default()
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    manifest_path: std::path::PathBuf,
    manifest: DatasetManifest,
    checkpoint: Checkpoint<f32>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_dataset(&small_synth(5), dir.path()).unwrap();
        let manifest_path = dir.path().join("manifest.ndjson");
        let (train_x, _) = load_split::<f32>(&manifest, &manifest_path, Split::Train).unwrap();
        let (val_x, _) = load_split::<f32>(&manifest, &manifest_path, Split::Val).unwrap();
        let config = VaeConfig {
            latent_dim: 8,
            channels: [4, 8, 8, 16, 16],
            max_epochs: 2,
            batch_size: 8,
            seed: 5,
            ..Default::default()
        };
        let checkpoint = train(
            &TrainData {
                train: train_x,
                val: val_x,
            },
            &config,
        )
        .unwrap();
        Fixture {
            _dir: dir,
            manifest_path,
            manifest,
            checkpoint,
        }
    })
}

fn detect_config() -> DetectConfig {
    DetectConfig {
        seed: 3,
        ..Default::default()
    }
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn synth_is_deterministic_and_splits_as_configured() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = synth_dataset(&small_synth(1), a.path()).unwrap();
    synth_dataset(&small_synth(1), b.path()).unwrap();
    assert_eq!(files_in(a.path()), files_in(b.path()));
    assert_eq!(
        files_in(&a.path().join("images")),
        files_in(&b.path().join("images"))
    );

    assert_eq!(
        m.split(Split::Train).count() + m.split(Split::Val).count(),
        24
    );
    assert_eq!(m.split(Split::Test).count(), 34);
    let outliers: Vec<_> = m
        .images
        .iter()
        .filter(|r| r.label == Label::Outlier)
        .collect();
    assert_eq!(outliers.len(), 4);
    assert!(outliers
        .iter()
        .all(|r| r.split == Split::Test && r.bbox.is_some()));
    assert!(m
        .images
        .iter()
        .filter(|r| r.label == Label::Inlier)
        .all(|r| r.bbox.is_none()));

    let c = tempfile::tempdir().unwrap();
    synth_dataset(&small_synth(2), c.path()).unwrap();
    assert_ne!(
        files_in(&a.path().join("images")),
        files_in(&c.path().join("images"))
    );
}

#[test]
fn implanted_panel_area_falls_within_pixel_bounds() {
    let g = CameraGeometry::default();
    let object = SizeBounds::default();
    let bounds = pixel_bounds(&g, &object).unwrap();
    let nominal = object.min_side_m * g.pixels_per_metre();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let mut pixels = vec![[-1.0; 3]; 64 * 80];
        let bbox = implant_panel(
            &mut rng,
            &mut pixels,
            64,
            80,
            nominal,
            (bounds.min_px, bounds.max_px),
        )
        .unwrap();
        let painted: Vec<usize> = (0..pixels.len()).filter(|&p| pixels[p][0] >= 0.0).collect();
        assert!(
            bounds.contains(painted.len()),
            "{} px outside {bounds:?}",
            painted.len()
        );
        for p in painted {
            let (r, c) = (p / 80, p % 80);
            assert!(r >= bbox[0] && r <= bbox[2] && c >= bbox[1] && c <= bbox[3]);
            assert!(pixels[p][0] > 0.7, "panel must be bright");
        }
    }
}

#[test]
fn manifest_round_trips_byte_identically() {
    let f = fixture();
    let bytes = fs::read(&f.manifest_path).unwrap();
    let loaded = DatasetManifest::load(&f.manifest_path).unwrap();
    assert_eq!(loaded, f.manifest);
    assert_eq!(loaded.to_ndjson().unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let mut edited = loaded.clone();
    edited.find_mut("img-00000").unwrap().operator_label = Some(Label::Outlier);
    let path = dir.path().join("m.ndjson");
    edited.save(&path).unwrap();
    assert_eq!(DatasetManifest::load(&path).unwrap(), edited);
    assert!(DatasetManifest::from_ndjson(&b"{\"kind\":\"image\"}\n"[..]).is_err());
    assert!(DatasetManifest::from_ndjson(&b""[..]).is_err());
}

#[test]
fn ingest_validates_resizes_and_labels() {
    let input = tempfile::tempdir().unwrap();
    for i in 0..10 {
        let img = image::RgbImage::from_fn(160, 128, |x, y| {
            image::Rgb([(x + i * 7) as u8, y as u8, 90])
        });
        let name = if i % 2 == 0 {
            format!("shot{i:02}.png")
        } else {
            format!("shot{i:02}.jpg")
        };
        img.save(input.path().join(name)).unwrap();
    }
    fs::write(input.path().join("broken.png"), b"definitely not a png").unwrap();
    fs::write(input.path().join("notes.txt"), b"ignored").unwrap();
    let sidecar = input.path().join("labels.csv");
    fs::write(
        &sidecar,
        "file,label,altitude_m\nshot03.jpg,outlier,2.5\nshot06.png,outlier,\nshot01.jpg,inlier,\n",
    )
    .unwrap();

    let out = tempfile::tempdir().unwrap();
    let opts = IngestOptions {
        labels_csv: Some(sidecar),
        seed: 4,
        ..Default::default()
    };
    let m = ingest(input.path(), out.path(), &opts).unwrap();
    assert_eq!(m.images.len(), 10);
    assert_eq!(m.skipped.len(), 1);
    assert_eq!(m.skipped[0].path, "broken.png");
    let outliers: Vec<_> = m
        .images
        .iter()
        .filter(|r| r.label == Label::Outlier)
        .collect();
    assert_eq!(outliers.len(), 2);
    assert!(outliers.iter().all(|r| r.split == Split::Test));
    assert_eq!(m.find("shot03").unwrap().altitude_m, 2.5);
    assert_eq!(m.find("shot06").unwrap().altitude_m, 2.0);
    assert_eq!(m.find("shot01").unwrap().label, Label::Inlier);
    assert_eq!(m.find("shot02").unwrap().label, Label::Unlabeled);
    assert!(m.split(Split::Train).count() >= 3);
    for r in &m.images {
        let img = image::open(out.path().join(&r.path)).unwrap();
        assert_eq!((img.width(), img.height()), (80, 64));
    }
    assert_eq!(
        DatasetManifest::load(out.path().join("manifest.ndjson")).unwrap(),
        m
    );

    let empty = tempfile::tempdir().unwrap();
    assert!(ingest(empty.path(), out.path(), &IngestOptions::default()).is_err());
    let bad = tempfile::tempdir().unwrap();
    fs::write(
        bad.path().join("labels.csv"),
        "file,label\nshot01.png,maybe\n",
    )
    .unwrap();
    image::RgbImage::new(8, 8)
        .save(bad.path().join("shot01.png"))
        .unwrap();
    let bad_opts = IngestOptions {
        labels_csv: Some(bad.path().join("labels.csv")),
        ..Default::default()
    };
    assert!(ingest(bad.path(), out.path(), &bad_opts).is_err());
}

#[test]
fn detect_is_byte_deterministic() {
    let f = fixture();
    let a = detect(
        &f.manifest,
        &f.manifest_path,
        &f.checkpoint,
        &detect_config(),
    )
    .unwrap();
    let b = detect(
        &f.manifest,
        &f.manifest_path,
        &f.checkpoint,
        &detect_config(),
    )
    .unwrap();
    assert_eq!(a.to_ndjson().unwrap(), b.to_ndjson().unwrap());
    assert_eq!(a.records.len(), 34);
    assert!(a.header.bandwidth > 0.0);
    assert!(a.header.perplexity < 34.0 / 3.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.ndjson");
    a.save(&path).unwrap();
    let loaded = DetectionRun::load(&path).unwrap();
    assert_eq!(loaded, a);
    assert_eq!(fs::read(&path).unwrap(), a.to_ndjson().unwrap());

    let csv = String::from_utf8(a.embedding_csv().unwrap()).unwrap();
    assert!(csv.starts_with("id,x,y,density,cluster,role"));
    assert_eq!(csv.lines().count(), 35);
}

#[test]
fn thresholds_are_vacuous_and_monotone() {
    let f = fixture();
    let run = detect(
        &f.manifest,
        &f.manifest_path,
        &f.checkpoint,
        &detect_config(),
    )
    .unwrap();
    let mut records = run.records.clone();

    apply_thresholds(
        &mut records,
        Thresholds {
            density_percentile: 0.0,
            roi_percentile: 0.0,
        },
    )
    .unwrap();
    assert!(records.iter().all(|r| r.joint_flag));
    apply_thresholds(
        &mut records,
        Thresholds {
            density_percentile: 100.0,
            roi_percentile: 0.0,
        },
    )
    .unwrap();
    assert!(records.iter().all(|r| !r.density_flag && !r.joint_flag));

    let flagged = |records: &mut Vec<_>, t: Thresholds| -> Vec<bool> {
        apply_thresholds(records, t).unwrap();
        records
            .iter()
            .map(|r: &seavae::pipeline::DetectionRecord| r.joint_flag)
            .collect()
    };
    let steps = [0.0, 10.0, 25.0, 50.0, 80.0, 95.0, 99.0, 100.0];
    for &fixed in &steps {
        let mut prev: Option<Vec<bool>> = None;
        for &p in &steps {
            let now = flagged(
                &mut records,
                Thresholds {
                    density_percentile: p,
                    roi_percentile: fixed,
                },
            );
            if let Some(prev) = &prev {
                assert!(
                    now.iter().zip(prev).all(|(n, p)| !n || *p),
                    "density {p} not nested"
                );
            }
            prev = Some(now);
        }
        let mut prev: Option<Vec<bool>> = None;
        for &q in &steps {
            let now = flagged(
                &mut records,
                Thresholds {
                    density_percentile: fixed,
                    roi_percentile: q,
                },
            );
            if let Some(prev) = &prev {
                assert!(
                    now.iter().zip(prev).all(|(n, p)| !n || *p),
                    "roi {q} not nested"
                );
            }
            prev = Some(now);
        }
    }
    // Dropping the ROI stage can only add flags.
    let joint = flagged(&mut records, Thresholds::default());
    let density_only = flagged(
        &mut records,
        Thresholds {
            roi_percentile: 0.0,
            ..Default::default()
        },
    );
    assert!(joint.iter().zip(&density_only).all(|(j, d)| !j || *d));
    assert!(apply_thresholds(
        &mut records,
        Thresholds {
            density_percentile: 101.0,
            roi_percentile: 0.0
        }
    )
    .is_err());
    assert!(apply_thresholds(
        &mut records,
        Thresholds {
            density_percentile: -1.0,
            roi_percentile: 0.0
        }
    )
    .is_err());
}

#[test]
fn evaluation_covers_every_mode_and_operator_labels() {
    let f = fixture();
    let mut run = detect(
        &f.manifest,
        &f.manifest_path,
        &f.checkpoint,
        &detect_config(),
    )
    .unwrap();
    for mode in DetectorMode::ALL {
        let report = evaluate(&run.records, mode, Truth::Dataset).unwrap();
        assert_eq!(report.counts.total(), 34);
        assert_eq!(report.counts.tp + report.counts.fn_, 4);
    }
    assert!(evaluate(&run.records, DetectorMode::Joint, Truth::Operator).is_err());
    run.records[0].operator_label = Some(Label::Outlier);
    run.records[1].operator_label = Some(Label::Inlier);
    let report = evaluate(&run.records, DetectorMode::Joint, Truth::Operator).unwrap();
    assert_eq!(report.counts.total(), 2);
}

#[test]
fn visuals_are_written_per_test_image() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    write_visuals(&f.manifest, &f.manifest_path, &f.checkpoint, dir.path(), 16).unwrap();
    let names: Vec<String> = files_in(dir.path()).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.len(), 68);
    let first = f.manifest.split(Split::Test).next().unwrap();
    let recon = image::open(dir.path().join(format!("{}_recon.png", first.id))).unwrap();
    assert_eq!((recon.width(), recon.height()), (80, 64));
}

#[test]
fn detect_rejects_tiny_test_sets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_inliers: 4,
        n_test_inliers: 5,
        n_outliers: 1,
        ..Default::default()
    };
    let m = synth_dataset(&cfg, dir.path()).unwrap();
    let f = fixture();
    assert!(detect(
        &m,
        &dir.path().join("manifest.ndjson"),
        &f.checkpoint,
        &detect_config()
    )
    .is_err());
}
