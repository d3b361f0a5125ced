use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use seavae::latent::percentile_flag;
use seavae::latent::Direction;
use seavae::pipeline::{
    DatasetManifest, DetectionRecord, DetectionRun, ImageRecord, Label, ManifestHeader, RunHeader,
    Source, Split, Thresholds, MANIFEST_VERSION, RECORDS_VERSION,
};
use seavae::roi::CameraGeometry;
use seavae_cli::server::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Setup {
    _dir: tempfile::TempDir,
    manifest: PathBuf,
    records: PathBuf,
}

/// `n` test records with distinct densities and ROI scores (70% zero), plus
/// matching manifest entries and PNG files.
fn setup(n: usize) -> Setup {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    let mut images = Vec::new();
    let mut records = Vec::new();
    for i in 0..n {
        let id = format!("img-{i:05}");
        let label = if i % 50 == 7 {
            Label::Outlier
        } else {
            Label::Inlier
        };
        if i < 20 {
            image::RgbImage::from_fn(80, 64, |x, y| {
                image::Rgb([(x * 3) as u8, (y * 4) as u8, i as u8])
            })
            .save(dir.path().join(format!("images/{id}.png")))
            .unwrap();
        }
        images.push(ImageRecord {
            id: id.clone(),
            path: format!("images/{id}.png"),
            label,
            altitude_m: 2.0,
            split: Split::Test,
            bbox: None,
            operator_label: None,
        });
        let k = (i * 7919) % n;
        records.push(DetectionRecord {
            id,
            label,
            operator_label: None,
            model_id: "m".into(),
            l2_score: 0.01,
            embedding: [i as f64, -(i as f64)],
            density: 1.0 + k as f64,
            density_flag: false,
            roi_score: if i % 10 < 7 {
                0.0
            } else {
                (i % 97) as f64 / 97.0 + 0.01
            },
            roi_flag: false,
            joint_flag: false,
            roi: None,
            cluster: Some(0),
            role: None,
        });
    }
    let manifest = DatasetManifest {
        header: ManifestHeader {
            version: MANIFEST_VERSION,
            source: Source::Synthetic,
            seed: 0,
            geometry: CameraGeometry::default(),
            image_shape: [3, 64, 80],
        },
        images,
        skipped: Vec::new(),
    };
    let mut run = DetectionRun {
        header: RunHeader {
            version: RECORDS_VERSION,
            model_id: "m".into(),
            thresholds: Thresholds::default(),
            bandwidth: 0.5,
            perplexity: 30.0,
            dbscan: None,
            roi_threshold: None,
        },
        records,
    };
    seavae::pipeline::apply_thresholds(&mut run.records, Thresholds::default()).unwrap();
    let mp = dir.path().join("manifest.ndjson");
    let rp = dir.path().join("records.ndjson");
    manifest.save(&mp).unwrap();
    run.save(&rp).unwrap();
    Setup {
        _dir: dir,
        manifest: mp,
        records: rp,
    }
}

fn app(s: &Setup) -> Router {
    router(Arc::new(
        AppState::open(&s.manifest, &s.records, None).unwrap(),
    ))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (
        status,
        to_bytes(resp.into_body(), usize::MAX)
            .await
            .unwrap()
            .to_vec(),
    )
}

async fn json_of(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn all_records(app: &Router) -> Vec<Value> {
    let (_, page) = json_of(app, "GET", "/images?limit=1000", None).await;
    page["items"].as_array().unwrap().clone()
}

#[tokio::test]
async fn pages_are_sorted_and_filtered() {
    let s = setup(120);
    let app = app(&s);
    let (status, page) = json_of(&app, "GET", "/images?offset=10&limit=25", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(page["total"], 120);
    let items = page["items"].as_array().unwrap();
    assert_eq!(items.len(), 25);
    let all = all_records(&app).await;
    assert_eq!(items[0], all[10]);
    for w in all.windows(2) {
        let (a, b) = (
            w[0]["roi_score"].as_f64().unwrap(),
            w[1]["roi_score"].as_f64().unwrap(),
        );
        assert!(a > b || (a == b && w[0]["id"].as_str() < w[1]["id"].as_str()));
    }
    let (_, flagged) = json_of(&app, "GET", "/images?filter=flagged&limit=1000", None).await;
    let n_joint = all.iter().filter(|r| r["joint_flag"] == true).count();
    assert_eq!(flagged["total"], n_joint);
    assert!(n_joint > 0);
    let (status, _) = call(&app, "GET", "/images?limit=0", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "GET", "/images?filter=odd", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn thresholds_follow_percentile_semantics() {
    let s = setup(200);
    let app = app(&s);
    let t = json!({ "density_percentile": 70.0, "roi_percentile": 90.0 });
    let (status, summary) = json_of(&app, "POST", "/thresholds", Some(t)).await;
    assert_eq!(status, StatusCode::OK);
    let all = all_records(&app).await;
    let density: Vec<f64> = all.iter().map(|r| r["density"].as_f64().unwrap()).collect();
    let roi: Vec<f64> = all
        .iter()
        .map(|r| r["roi_score"].as_f64().unwrap())
        .collect();
    let df = percentile_flag(&density, 30.0, Direction::Below)
        .unwrap()
        .flags;
    let rf = percentile_flag(&roi, 90.0, Direction::Above).unwrap().flags;
    for (i, r) in all.iter().enumerate() {
        assert_eq!(r["density_flag"], df[i]);
        assert_eq!(r["roi_flag"], rf[i]);
        assert_eq!(r["joint_flag"], df[i] && rf[i]);
    }
    assert_eq!(
        summary["flagged"]["joint"],
        all.iter().filter(|r| r["joint_flag"] == true).count()
    );
    let (_, current) = json_of(&app, "GET", "/thresholds", None).await;
    assert_eq!(current["thresholds"]["roi_percentile"], 90.0);

    let (_, vacuous) = json_of(
        &app,
        "POST",
        "/thresholds",
        Some(json!({ "density_percentile": 0, "roi_percentile": 0 })),
    )
    .await;
    assert_eq!(vacuous["flagged"]["joint"], 200);
}

#[tokio::test]
async fn malformed_thresholds_are_rejected_with_message() {
    let s = setup(50);
    let app = app(&s);
    for body in [
        json!({ "density_percentile": 120.0, "roi_percentile": 80.0 }),
        json!({ "density_percentile": "high", "roi_percentile": 80.0 }),
        json!({ "density_percentile": 80.0 }),
        json!([1, 2]),
    ] {
        let (status, err) = json_of(&app, "POST", "/thresholds", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert!(!err["error"].as_str().unwrap().is_empty());
    }
    let (_, current) = json_of(&app, "GET", "/thresholds", None).await;
    assert_eq!(current["thresholds"]["density_percentile"], 80.0);
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let s = setup(30);
    let app = app(&s);
    for uri in [
        "/images/nope",
        "/images/nope/thumbnail",
        "/images/nope/reconstruction",
        "/images/nope/heatmap",
    ] {
        assert_eq!(
            call(&app, "GET", uri, None).await.0,
            StatusCode::NOT_FOUND,
            "{uri}"
        );
    }
    let (status, _) = call(
        &app,
        "POST",
        "/labels",
        Some(json!({ "id": "nope", "label": "outlier" })),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(
        &app,
        "POST",
        "/labels",
        Some(json!({ "id": "img-00001", "label": "maybe" })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    // No checkpoint was loaded, so model-backed views are unavailable.
    assert_eq!(
        call(&app, "GET", "/images/img-00001/reconstruction", None)
            .await
            .0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn thumbnails_are_png() {
    let s = setup(30);
    let app = app(&s);
    let (status, bytes) = call(&app, "GET", "/images/img-00003/thumbnail", None).await;
    assert_eq!(status, StatusCode::OK);
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).unwrap();
    assert_eq!((img.width(), img.height()), (80, 64));
}

#[tokio::test]
async fn labels_persist_across_restart_and_feed_metrics() {
    let s = setup(60);
    let app1 = app(&s);
    let (_, m) = json_of(&app1, "GET", "/metrics", None).await;
    assert_eq!(m["labeled"], 0);
    assert!(m["report"].is_null());

    let labels = [
        ("img-00007", "outlier"),
        ("img-00057", "outlier"),
        ("img-00001", "inlier"),
        ("img-00002", "inlier"),
        ("img-00003", "outlier"),
    ];
    for (id, l) in labels {
        let (status, rec) = json_of(
            &app1,
            "POST",
            "/labels",
            Some(json!({ "id": id, "label": l })),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(rec["operator_label"], l);
    }
    let (_, m) = json_of(&app1, "GET", "/metrics", None).await;
    assert_eq!(m["labeled"], 5);
    let c = &m["report"]["counts"];
    let total: u64 = ["tp", "fp", "tn", "fn_"]
        .iter()
        .map(|k| c[k].as_u64().unwrap())
        .sum();
    assert_eq!(total, 5);

    // Undo clears the label server-side.
    json_of(
        &app1,
        "POST",
        "/labels",
        Some(json!({ "id": "img-00003", "label": null })),
    )
    .await;
    drop(app1);

    let disk = DatasetManifest::load(&s.manifest).unwrap();
    assert_eq!(
        disk.find("img-00007").unwrap().operator_label,
        Some(Label::Outlier)
    );
    assert_eq!(disk.find("img-00003").unwrap().operator_label, None);

    let app2 = app(&s);
    let (_, rec) = json_of(&app2, "GET", "/images/img-00057", None).await;
    assert_eq!(rec["operator_label"], "outlier");
    let (_, labeled) = json_of(&app2, "GET", "/images?filter=labeled", None).await;
    assert_eq!(labeled["total"], 4);
    let (_, m) = json_of(&app2, "GET", "/metrics?mode=roi", None).await;
    assert_eq!(m["labeled"], 4);
    assert_eq!(m["mode"], "roi");
}

#[tokio::test]
async fn embedding_and_export_cover_every_record() {
    let s = setup(40);
    let app = app(&s);
    let (_, e) = json_of(&app, "GET", "/embedding", None).await;
    assert_eq!(e["points"].as_array().unwrap().len(), 40);
    assert_eq!(e["bandwidth"], 0.5);
    let (status, csv) = call(&app, "GET", "/export", None).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("id,label,operator_label,l2_score"));
    assert_eq!(text.lines().count(), 41);
}

#[tokio::test]
async fn threshold_update_on_thousand_records_is_fast() {
    let s = setup(1000);
    let app = app(&s);
    call(
        &app,
        "POST",
        "/thresholds",
        Some(json!({ "density_percentile": 50, "roi_percentile": 50 })),
    )
    .await;
    let mut worst = 0.0f64;
    for (i, p) in [60.0, 85.0, 95.0, 70.0, 80.0].into_iter().enumerate() {
        let t0 = Instant::now();
        let (status, _) = call(
            &app,
            "POST",
            "/thresholds",
            Some(json!({ "density_percentile": p, "roi_percentile": 100.0 - i as f64 })),
        )
        .await;
        worst = worst.max(t0.elapsed().as_secs_f64());
        assert_eq!(status, StatusCode::OK);
    }
    assert!(worst < 0.2, "slowest threshold update took {worst:.3} s");
}

#[test]
fn records_outside_the_manifest_are_rejected() {
    let s = setup(20);
    let mut m = DatasetManifest::load(&s.manifest).unwrap();
    m.images.pop();
    let path: &Path = &s.manifest;
    m.save(path).unwrap();
    assert!(AppState::open(&s.manifest, &s.records, None).is_err());
}
