//! HTTP facade over the pipeline.
//!
//! One session per process. Reads (`/meta`, `/render`, `/status`) only take
//! short locks on immutable layers, so they stay responsive while a job runs.
//! At most one job runs at a time; a second one gets 409.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use geofeat::geoml::{AlgorithmSpec, Aggregation, ClassifierModel, CvReport, ScoreMapping};
use geofeat::raster_io::{open_raster, GeoTransform, Point, Raster};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{PipelineConfig, SchemeConfig};
use crate::error::{CliError, CliResult, Stage, EXIT_CONFIG, EXIT_INPUT};
use crate::pipeline::{self, FeatureFlags, Report};
use crate::render::{render_png, Style, Window};

#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        let status = match e.code {
            EXIT_CONFIG => StatusCode::BAD_REQUEST,
            EXIT_INPUT => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.message)
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn conflict(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::CONFLICT, msg.into())
}

fn unprocessable(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::UNPROCESSABLE_ENTITY, msg.into())
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub path: PathBuf,
    pub raster: Arc<Raster>,
    pub style: Style,
}

#[derive(Debug, Default)]
pub struct Session {
    pub layers: BTreeMap<String, Layer>,
    pub templates: Vec<Point>,
    pub labels: Vec<Point>,
    pub report: Option<CvReport>,
    pub model: Option<ClassifierModel>,
    pub similarity: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Status {
    pub stage: String,
    pub done: usize,
    pub total: usize,
    pub paused: bool,
    pub running: bool,
    pub job: Option<u64>,
    pub kind: Option<String>,
    pub error: Option<String>,
}

impl Default for Status {
    fn default() -> Self {
        Self {
            stage: "idle".into(),
            done: 0,
            total: 0,
            paused: false,
            running: false,
            job: None,
            kind: None,
            error: None,
        }
    }
}

pub struct AppState {
    pub config: PipelineConfig,
    pub workspace: PathBuf,
    session: Mutex<Session>,
    status: Mutex<Status>,
    next_job: Mutex<u64>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn load_layer(path: &Path, style: Style) -> CliResult<Layer> {
    let raster = open_raster(path).stage("raster-io")?.read_all().stage("raster-io")?;
    Ok(Layer {
        path: path.to_path_buf(),
        raster: Arc::new(raster),
        style,
    })
}

impl AppState {
    /// Session preloaded with `input.raster` and `input.features` when set.
    pub fn new(config: PipelineConfig, workspace: PathBuf) -> CliResult<Arc<Self>> {
        std::fs::create_dir_all(&workspace).map_err(|e| CliError::input(format!("service: {}: {e}", workspace.display())))?;
        let mut session = Session::default();
        if let Some(p) = &config.input.raster {
            session.layers.insert("source".into(), load_layer(p, Style::Composite)?);
        }
        if let Some(p) = &config.input.features {
            session.layers.insert("features".into(), load_layer(p, Style::Composite)?);
        }
        Ok(Arc::new(Self {
            config,
            workspace,
            session: Mutex::new(session),
            status: Mutex::new(Status::default()),
            next_job: Mutex::new(0),
        }))
    }

    pub fn session(&self) -> MutexGuard<'_, Session> {
        lock(&self.session)
    }

    pub fn status(&self) -> Status {
        lock(&self.status).clone()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.workspace.join(name)
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.workspace).unwrap_or(p).display().to_string()
    }

    fn layer(&self, name: &str) -> Option<Layer> {
        self.session().layers.get(name).cloned()
    }

    fn features_layer(&self) -> ApiResult<Layer> {
        self.layer("features").ok_or_else(|| conflict("no feature raster loaded"))
    }

    /// Claim the single job slot.
    fn begin(&self, kind: &str) -> ApiResult<u64> {
        let mut st = lock(&self.status);
        if st.running {
            return Err(conflict(format!("a {} job is already running", st.kind.as_deref().unwrap_or("previous"))));
        }
        let id = {
            let mut n = lock(&self.next_job);
            *n += 1;
            *n
        };
        *st = Status {
            stage: "queued".into(),
            running: true,
            job: Some(id),
            kind: Some(kind.into()),
            ..Status::default()
        };
        Ok(id)
    }

    fn on_report(&self, r: Report) {
        let mut st = lock(&self.status);
        match r {
            Report::Stage(s) => {
                st.stage = s.into();
                st.paused = false;
            }
            Report::Progress(p) => {
                st.done = p.completed_batches;
                st.total = p.total_batches;
                st.paused = self.config.encoder.pause_ms > 0 && p.completed_batches < p.total_batches;
            }
            Report::Info(msg) => log::info!("{msg}"),
        }
    }

    fn finish(&self, result: &Result<(), ApiError>) {
        let mut st = lock(&self.status);
        st.running = false;
        st.paused = false;
        match result {
            Ok(()) => {
                st.stage = "done".into();
                if st.total == 0 {
                    st.total = 1;
                }
                st.done = st.total;
            }
            Err(e) => {
                st.stage = "failed".into();
                st.error = Some(e.1.clone());
            }
        }
    }
}

/// Run `f` on the blocking pool inside the job slot claimed as `id`.
fn spawn_job<F>(state: &Arc<AppState>, id: u64, f: F) -> tokio::task::JoinHandle<ApiResult<()>>
where
    F: FnOnce(&AppState, &mut dyn FnMut(Report)) -> ApiResult<()> + Send + 'static,
{
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        let result = f(&st, &mut |r| st.on_report(r));
        if let Err(e) = &result {
            log::warn!("job {id} failed: {}", e.1);
        }
        st.finish(&result);
        result
    })
}

async fn join(handle: tokio::task::JoinHandle<ApiResult<()>>) -> ApiResult<()> {
    handle
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("job panicked: {e}")))?
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| unprocessable(format!("request body: {e}")))
}

fn geometry(layer: &Layer, ws: &AppState) -> Value {
    let r = &layer.raster;
    json!({
        "path": ws.relative(&layer.path),
        "width": r.width,
        "height": r.height,
        "bands": r.band_count,
        "crs": r.crs_id,
        "geotransform": r.geotransform.to_gdal(),
    })
}

async fn meta(State(st): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let s = st.session();
    if !s.layers.contains_key("source") && !s.layers.contains_key("features") {
        return Err(conflict("no raster loaded"));
    }
    let layers: BTreeMap<&String, Value> = s.layers.iter().map(|(k, l)| (k, geometry(l, &st))).collect();
    Ok(Json(json!({
        "source": s.layers.get("source").map(|l| geometry(l, &st)),
        "features": s.layers.get("features").map(|l| geometry(l, &st)),
        "layers": layers,
    })))
}

#[derive(Debug, Deserialize)]
struct RenderQuery {
    layer: String,
    bands: Option<String>,
    window: Option<String>,
}

async fn render(State(st): State<Arc<AppState>>, Query(q): Query<RenderQuery>) -> ApiResult<Response> {
    let layer = st
        .layer(&q.layer)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown layer {:?}", q.layer)))?;
    let bad = |m: String| ApiError(StatusCode::BAD_REQUEST, m);
    let bands: Vec<usize> = match q.bands.as_deref().filter(|s| !s.is_empty()) {
        Some(s) => s
            .split(',')
            .map(|b| match b.trim().parse::<usize>() {
                Ok(n) if n >= 1 => Ok(n - 1),
                _ => Err(bad(format!("bad band {b:?}; bands are 1-based"))),
            })
            .collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    let window = match q.window.as_deref() {
        Some(w) => Window::parse(w).map_err(bad)?,
        None => Window::full(&layer.raster),
    };
    let png = tokio::task::spawn_blocking(move || render_png(&layer.raster, layer.style, &bands, window))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(bad)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn status(State(st): State<Arc<AppState>>) -> Json<Status> {
    Json(st.status())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeaturesRequest {
    #[serde(default)]
    resume: bool,
}

async fn features(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: FeaturesRequest = parse_body(&body)?;
    let source = st.layer("source").ok_or_else(|| conflict("no source raster loaded"))?;
    let id = st.begin("features")?;
    let out = st.out("features.tif");
    spawn_job(&st, id, move |st, report| {
        let flags = FeatureFlags {
            resume: req.resume,
            ..FeatureFlags::default()
        };
        pipeline::run_features(&st.config, &source.path, &out, &flags, report)?;
        let layer = load_layer(&out, Style::Composite)?;
        st.session().layers.insert("features".into(), layer);
        Ok(())
    });
    Ok(Json(json!({ "job": id })))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterRequest {
    k: Option<usize>,
}

async fn cluster(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: ClusterRequest = parse_body(&body)?;
    let feats = st.features_layer()?;
    let id = st.begin("cluster")?;
    let out = st.out("clusters.tif");
    spawn_job(&st, id, move |st, report| {
        let mut cfg = st.config.clone();
        if let Some(k) = req.k {
            cfg.analysis.kmeans.k = k;
        }
        pipeline::run_cluster(&cfg, &feats.path, &out, report)?;
        let layer = load_layer(&out, Style::Categorical)?;
        st.session().layers.insert("clusters".into(), layer);
        Ok(())
    });
    Ok(Json(json!({ "job": id })))
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct PointIn {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub fold: Option<i64>,
    #[serde(default)]
    pub split: Option<String>,
}

impl PointIn {
    fn to_point(&self) -> Point {
        let mut p = Point::new(self.x, self.y);
        if let Some(l) = &self.label {
            p = p.with_property("label", l.as_str());
        }
        if let Some(f) = self.fold {
            p = p.with_property("fold", f);
        }
        if let Some(s) = &self.split {
            p = p.with_property("split", s.as_str());
        }
        p
    }
}

fn check_extent(r: &Raster, points: &[PointIn]) -> ApiResult<()> {
    for p in points {
        r.cell_of_geo(p.x, p.y)
            .map_err(|_| unprocessable(format!("point ({}, {}) is outside the raster extent", p.x, p.y)))?;
    }
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimilarityRequest {
    points: Vec<PointIn>,
    aggregation: Option<Aggregation>,
    score: Option<ScoreMapping>,
    threshold: Option<f64>,
}

async fn similarity(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: SimilarityRequest = parse_body(&body)?;
    let feats = st.features_layer()?;
    if req.points.is_empty() {
        return Err(unprocessable("at least one template point is required"));
    }
    check_extent(&feats.raster, &req.points)?;
    if let Some(t) = req.threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(unprocessable(format!("threshold {t} outside [0, 1]")));
        }
    }
    let points: Vec<Point> = req.points.iter().map(PointIn::to_point).collect();
    let id = st.begin("similarity")?;
    st.session().templates = points.clone();
    let out = st.out("similarity.tif");
    spawn_job(&st, id, move |st, report| {
        let mut cfg = st.config.clone();
        cfg.geoml.aggregation = req.aggregation.unwrap_or(cfg.geoml.aggregation);
        cfg.geoml.score = req.score.unwrap_or(cfg.geoml.score);
        cfg.geoml.threshold = req.threshold;
        let res = pipeline::run_similarity(&cfg, &feats.path, &points, &out, report)?;
        let layer = load_layer(&res.raster, Style::Ramp)?;
        let overlay = st.out("similarity.png");
        let png = render_png(&layer.raster, Style::Ramp, &[], Window::full(&layer.raster))
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e))?;
        std::fs::write(&overlay, png).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        let mask = match &res.mask {
            Some(m) => Some(load_layer(m, Style::Categorical)?),
            None => None,
        };
        let result = json!({
            "job": id,
            "raster": st.relative(&res.raster),
            "overlay": st.relative(&overlay),
            "mask": res.mask.as_deref().map(|m| st.relative(m)),
            "template": res.template,
        });
        let mut s = st.session();
        s.layers.insert("similarity".into(), layer);
        match mask {
            Some(m) => s.layers.insert("mask".into(), m),
            None => s.layers.remove("mask"),
        };
        s.similarity = Some(result);
        Ok(())
    });
    Ok(Json(json!({ "job": id })))
}

async fn similarity_result(State(st): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let status = st.status();
    if status.running && status.kind.as_deref() == Some("similarity") {
        return Err(conflict("similarity job still running"));
    }
    st.session()
        .similarity
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, "no similarity result yet".into()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsRequest {
    points: Vec<PointIn>,
}

fn points_json(points: &[Point]) -> Value {
    geofeat::raster_io::points_to_geojson(points, None)
}

async fn post_labels(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: LabelsRequest = parse_body(&body)?;
    let feats = st.features_layer()?;
    if let Some(p) = req.points.iter().find(|p| p.label.as_deref().is_none_or(|l| l.trim().is_empty())) {
        return Err(unprocessable(format!("point ({}, {}) has no label", p.x, p.y)));
    }
    check_extent(&feats.raster, &req.points)?;
    if lock(&st.status).running {
        return Err(conflict("a job is running"));
    }
    let points: Vec<Point> = req.points.iter().map(PointIn::to_point).collect();
    let mut s = st.session();
    s.labels = points;
    Ok(Json(json!({ "count": s.labels.len(), "points": points_json(&s.labels) })))
}

async fn get_labels(State(st): State<Arc<AppState>>) -> Json<Value> {
    let s = st.session();
    Json(json!({
        "labels": points_json(&s.labels),
        "templates": points_json(&s.templates),
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitRequest {
    algorithm: Option<AlgorithmSpec>,
    scheme: Option<SchemeConfig>,
}

/// Cross-validates, then fits on every label and keeps the model.
async fn fit(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<CvReport>> {
    let req: FitRequest = parse_body(&body)?;
    let feats = st.features_layer()?;
    let labels = st.session().labels.clone();
    if labels.is_empty() {
        return Err(conflict("no labels registered"));
    }
    let id = st.begin("fit")?;
    let (report_path, model_path) = (st.out("cv_report.json"), st.out("model.json"));
    let handle = spawn_job(&st, id, move |st, report| {
        let mut cfg = st.config.clone();
        cfg.input.label_field = Some("label".into());
        if let Some(a) = req.algorithm {
            cfg.geoml.algorithm = a;
        }
        if let Some(s) = req.scheme {
            cfg.geoml.scheme = s;
        }
        let cv = pipeline::run_validate(&cfg, &feats.path, &labels, Some(&report_path), report)?;
        let model = pipeline::run_fit(&cfg, &feats.path, &labels, &model_path, report)?;
        let mut s = st.session();
        s.report = Some(cv);
        s.model = Some(model);
        Ok(())
    });
    join(handle).await?;
    Ok(Json(st.session().report.clone().expect("fit stored a report")))
}

async fn predict(State(st): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let feats = st.features_layer()?;
    let model = st.session().model.clone().ok_or_else(|| conflict("no fitted model"))?;
    let id = st.begin("predict")?;
    let out = st.out("prediction.tif");
    let handle = spawn_job(&st, id, move |st, report| {
        pipeline::run_predict(&st.config, &feats.path, &model, &out, report)?;
        let layer = load_layer(&out, Style::Categorical)?;
        st.session().layers.insert("prediction".into(), layer);
        Ok(())
    });
    join(handle).await?;
    let classes = st.session().model.as_ref().map(|m| m.classes.clone());
    Ok(Json(json!({
        "layer": "prediction",
        "raster": st.relative(&st.out("prediction.tif")),
        "classes": classes,
    })))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/render", get(render))
        .route("/status", get(status))
        .route("/features", post(features))
        .route("/cluster", post(cluster))
        .route("/similarity", post(similarity))
        .route("/similarity/result", get(similarity_result))
        .route("/labels", post(post_labels).get(get_labels))
        .route("/fit", post(fit))
        .route("/predict", post(predict))
        .with_state(state)
}

/// Pixel-center coordinates of a cell, convenient for clients and tests.
pub fn cell_center(gt: &GeoTransform, col: usize, row: usize) -> (f64, f64) {
    gt.geo_of_pixel(col as f64 + 0.5, row as f64 + 0.5)
}

pub async fn serve(config: PipelineConfig) -> CliResult<()> {
    let workspace = config.service.workspace.clone().unwrap_or_else(|| PathBuf::from("."));
    let addr: SocketAddr = config
        .service
        .bind
        .parse()
        .map_err(|e| CliError::config(format!("service: bind address {:?}: {e}", config.service.bind)))?;
    let state = AppState::new(config, workspace)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::input(format!("service: bind {addr}: {e}")))?;
    println!("listening on http://{addr}");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| CliError::input(format!("service: {e}")))
}
