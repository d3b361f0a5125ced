//! HTTP JSON API over a detection run, for the operator review console.
//!
//! Scores are computed once by `detect`; the service only re-applies
//! percentile gates, so threshold changes never touch the model. Operator
//! labels are written back to the dataset manifest.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use seavae::pipeline::{
    apply_thresholds, evaluate, load_image, records_csv, resolve, tensor_to_rgb, DatasetManifest,
    DetectionRecord, DetectionRun, DetectorMode, Label, RunHeader, Thresholds, Truth,
};
use seavae::roi::heatmap;
use seavae::vae::Checkpoint;
use seavae::Vae32;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        Self(StatusCode::BAD_REQUEST, msg.into())
    }

    fn not_found(id: &str) -> Self {
        Self(StatusCode::NOT_FOUND, format!("unknown image id {id:?}"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Flags currently in force. Replaced wholesale so readers see either the old
/// or the new flag set.
#[derive(Debug, Clone)]
struct View {
    thresholds: Thresholds,
    records: Vec<DetectionRecord>,
}

pub struct AppState {
    manifest_path: PathBuf,
    header: RunHeader,
    index: HashMap<String, usize>,
    view: RwLock<Arc<View>>,
    /// Serializes label writes and threshold swaps.
    writer: Mutex<DatasetManifest>,
    model: Option<Vae32>,
}

impl AppState {
    /// Builds the service state. Operator labels stored in the manifest take
    /// precedence over those cached in the run.
    pub fn new(
        manifest_path: &Path,
        manifest: DatasetManifest,
        run: DetectionRun,
        checkpoint: Option<Checkpoint<f32>>,
    ) -> anyhow::Result<Self> {
        let mut records = run.records;
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter_mut().enumerate() {
            let Some(img) = manifest.find(&r.id) else {
                anyhow::bail!("record {} is not in the manifest", r.id);
            };
            r.operator_label = img.operator_label;
            index.insert(r.id.clone(), i);
        }
        let model = checkpoint.map(|c| c.model()).transpose()?;
        Ok(Self {
            manifest_path: manifest_path.to_path_buf(),
            view: RwLock::new(Arc::new(View {
                thresholds: run.header.thresholds,
                records,
            })),
            header: run.header,
            index,
            writer: Mutex::new(manifest),
            model,
        })
    }

    pub fn open(
        manifest_path: &Path,
        records_path: &Path,
        checkpoint: Option<&Path>,
    ) -> anyhow::Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let run = DetectionRun::load(records_path)?;
        let checkpoint = checkpoint.map(Checkpoint::<f32>::load).transpose()?;
        Self::new(manifest_path, manifest, run, checkpoint)
    }

    fn view(&self) -> Arc<View> {
        self.view.read().expect("view lock poisoned").clone()
    }

    fn swap(&self, view: View) {
        *self.view.write().expect("view lock poisoned") = Arc::new(view);
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/images", get(list_images))
        .route("/images/{id}", get(one_image))
        .route("/images/{id}/thumbnail", get(thumbnail))
        .route("/images/{id}/reconstruction", get(reconstruction))
        .route("/images/{id}/heatmap", get(heatmap_png))
        .route("/embedding", get(embedding))
        .route("/thresholds", get(get_thresholds).post(set_thresholds))
        .route("/labels", post(set_label))
        .route("/metrics", get(metrics))
        .route("/export", get(export))
        .with_state(state)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Filter {
    #[default]
    All,
    Flagged,
    Labeled,
}

#[derive(Debug, Deserialize)]
pub struct ListQuery {
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
    #[serde(default)]
    filter: Filter,
}

const MAX_PAGE: usize = 1000;

#[derive(Debug, Serialize)]
struct Page<'a> {
    total: usize,
    offset: usize,
    limit: usize,
    thresholds: Thresholds,
    items: Vec<&'a DetectionRecord>,
}

/// Records ordered by ROI score (highest first), ties by id.
async fn list_images(
    State(s): State<Arc<AppState>>,
    Query(q): Query<ListQuery>,
) -> ApiResult<Response> {
    let limit = q.limit.unwrap_or(50);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request(format!(
            "limit must lie in 1..={MAX_PAGE}"
        )));
    }
    let view = s.view();
    let mut items: Vec<&DetectionRecord> = view
        .records
        .iter()
        .filter(|r| match q.filter {
            Filter::All => true,
            Filter::Flagged => r.joint_flag,
            Filter::Labeled => r.operator_label.is_some_and(|l| l != Label::Unlabeled),
        })
        .collect();
    items.sort_by(|a, b| {
        b.roi_score
            .total_cmp(&a.roi_score)
            .then_with(|| a.id.cmp(&b.id))
    });
    let total = items.len();
    let items = items.into_iter().skip(q.offset).take(limit).collect();
    Ok(Json(Page {
        total,
        offset: q.offset,
        limit,
        thresholds: view.thresholds,
        items,
    })
    .into_response())
}

fn record(s: &AppState, id: &str) -> ApiResult<DetectionRecord> {
    let i = *s.index.get(id).ok_or_else(|| ApiError::not_found(id))?;
    Ok(s.view().records[i].clone())
}

async fn one_image(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<DetectionRecord>> {
    record(&s, &id).map(Json)
}

fn png(img: image::DynamicImage) -> ApiResult<Response> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], out.into_inner()).into_response())
}

async fn load_input(s: &AppState, id: &str) -> ApiResult<seavae::Tensor32> {
    record(s, id)?;
    let manifest = s.writer.lock().await;
    let img = manifest.find(id).ok_or_else(|| ApiError::not_found(id))?;
    let [_, h, w] = manifest.header.image_shape;
    load_image::<f32>(&resolve(&s.manifest_path, img), h, w).map_err(ApiError::internal)
}

async fn thumbnail(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    png(tensor_to_rgb(&load_input(&s, &id).await?).into())
}

async fn reconstruct(s: &AppState, id: &str) -> ApiResult<(seavae::Tensor32, seavae::Tensor32)> {
    let input = load_input(s, id).await?;
    let model = s.model.as_ref().ok_or_else(|| {
        ApiError(
            StatusCode::NOT_FOUND,
            "service was started without a checkpoint".into(),
        )
    })?;
    let recon = model.reconstruct(&input).map_err(ApiError::internal)?;
    Ok((input, recon))
}

async fn reconstruction(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    let (_, recon) = reconstruct(&s, &id).await?;
    png(tensor_to_rgb(&recon).into())
}

async fn heatmap_png(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    let (input, recon) = reconstruct(&s, &id).await?;
    png(heatmap(&input, &recon)
        .map_err(ApiError::internal)?
        .to_gray_image()
        .into())
}

#[derive(Debug, Serialize)]
struct EmbeddingPoint<'a> {
    id: &'a str,
    x: f64,
    y: f64,
    density: f64,
    density_flag: bool,
    joint_flag: bool,
    cluster: Option<usize>,
    operator_label: Option<Label>,
}

async fn embedding(State(s): State<Arc<AppState>>) -> Response {
    let view = s.view();
    let points: Vec<EmbeddingPoint> = view
        .records
        .iter()
        .map(|r| EmbeddingPoint {
            id: &r.id,
            x: r.embedding[0],
            y: r.embedding[1],
            density: r.density,
            density_flag: r.density_flag,
            joint_flag: r.joint_flag,
            cluster: r.cluster,
            operator_label: r.operator_label,
        })
        .collect();
    Json(json!({
        "bandwidth": s.header.bandwidth,
        "perplexity": s.header.perplexity,
        "points": points,
    }))
    .into_response()
}

fn threshold_summary(view: &View) -> serde_json::Value {
    let count = |f: fn(&DetectionRecord) -> bool| view.records.iter().filter(|r| f(r)).count();
    json!({
        "thresholds": view.thresholds,
        "flagged": {
            "density": count(|r| r.density_flag),
            "roi": count(|r| r.roi_flag),
            "joint": count(|r| r.joint_flag),
        },
        "total": view.records.len(),
    })
}

async fn get_thresholds(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(threshold_summary(&s.view()))
}

async fn set_thresholds(
    State(s): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let malformed =
        |e: serde_json::Error| ApiError::bad_request(format!("malformed thresholds: {e}"));
    let value: serde_json::Value = serde_json::from_slice(&body).map_err(malformed)?;
    if !value.is_object() {
        return Err(ApiError::bad_request("thresholds must be a JSON object"));
    }
    let t: Thresholds = serde_json::from_value(value).map_err(malformed)?;
    t.validate()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let _writer = s.writer.lock().await;
    let mut records = s.view().records.clone();
    apply_thresholds(&mut records, t).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let view = View {
        thresholds: t,
        records,
    };
    let summary = threshold_summary(&view);
    s.swap(view);
    Ok(Json(summary))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRequest {
    id: String,
    /// `null` or `"unlabeled"` clears the operator label.
    label: Option<Label>,
}

async fn set_label(
    State(s): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<Json<DetectionRecord>> {
    let req: LabelRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("malformed label: {e}")))?;
    let i = *s
        .index
        .get(&req.id)
        .ok_or_else(|| ApiError::not_found(&req.id))?;
    let label = req.label.filter(|l| *l != Label::Unlabeled);
    let mut manifest = s.writer.lock().await;
    let mut updated = manifest.clone();
    updated
        .find_mut(&req.id)
        .ok_or_else(|| ApiError::not_found(&req.id))?
        .operator_label = label;
    let path = s.manifest_path.clone();
    let to_save = updated.clone();
    tokio::task::spawn_blocking(move || to_save.save(&path))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;
    *manifest = updated;
    let mut view = (*s.view()).clone();
    view.records[i].operator_label = label;
    let rec = view.records[i].clone();
    s.swap(view);
    Ok(Json(rec))
}

#[derive(Debug, Deserialize)]
pub struct MetricsQuery {
    mode: Option<DetectorMode>,
}

/// Live metrics over the operator-labeled subset.
async fn metrics(
    State(s): State<Arc<AppState>>,
    Query(q): Query<MetricsQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    let mode = q.mode.unwrap_or(DetectorMode::Joint);
    let view = s.view();
    let labeled = view
        .records
        .iter()
        .filter(|r| r.operator_label.and_then(|l| l.is_outlier()).is_some())
        .count();
    let report = if labeled == 0 {
        None
    } else {
        Some(evaluate(&view.records, mode, Truth::Operator).map_err(ApiError::internal)?)
    };
    Ok(Json(
        json!({ "mode": mode, "labeled": labeled, "report": report }),
    ))
}

async fn export(State(s): State<Arc<AppState>>) -> ApiResult<Response> {
    let csv = records_csv(&s.view().records).map_err(ApiError::internal)?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv"),
            (
                header::CONTENT_DISPOSITION,
                "attachment; filename=\"records.csv\"",
            ),
        ],
        csv,
    )
        .into_response())
}

/// Serves until the process is stopped.
pub async fn serve(state: AppState, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await?;
    Ok(())
}
