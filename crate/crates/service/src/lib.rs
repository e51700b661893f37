//! HTTP API for interactive annotation.
//!
//! ```text
//! POST /sessions                  PNG body            -> 201 {session_id}
//! POST /sessions/{id}/predict     {bbox, class?}      -> prediction
//! POST /sessions/{id}/correct     {vertex_index,x,y}  -> prediction + moved vertices
//! GET  /sessions/{id}/export                          -> manifest line
//! ```
//!
//! Coordinates are in image pixels throughout.

mod engine;
pub mod sessions;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::SystemTime;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use splitgcn_core::data::{crop_frame, Augment, CropFrame, InstanceRecord};
use splitgcn_core::imgeo::Point;
use splitgcn_core::interactive::{Correction, StateSnapshot};
use splitgcn_core::model::ModelConfig;

pub use engine::Engine;
use sessions::{Session, SessionStore};

pub const MAX_IMAGE_BYTES: usize = 8 * 1024 * 1024;
pub const DEFAULT_PORT: u16 = 8008;
pub const DEFAULT_MAX_SESSIONS: usize = 256;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_sessions: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_sessions: DEFAULT_MAX_SESSIONS,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    sessions: Arc<SessionStore>,
}

impl AppState {
    pub fn new(engine: Engine, cfg: ServiceConfig) -> Self {
        Self {
            engine: Arc::new(engine),
            sessions: Arc::new(SessionStore::new(cfg.max_sessions)),
        }
    }

    pub fn model_config(&self) -> &ModelConfig {
        self.engine.config()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

fn err(code: StatusCode, msg: impl Into<String>) -> ApiError {
    ApiError(code, msg.into())
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

#[derive(Debug, Deserialize)]
pub struct CreateParams {
    /// Image name recorded on export.
    pub name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictRequest {
    pub bbox: [f64; 4],
    #[serde(default)]
    pub class: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectRequest {
    pub vertex_index: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencySummary {
    /// Edges kept after truncation.
    pub edges: usize,
    pub components: usize,
    /// Mean and minimum soft score over kept edges.
    pub mean_edge_score: f64,
    pub min_edge_score: f64,
    /// Mean soft score over pairs that were cut.
    pub mean_cut_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub components: Vec<Vec<Point>>,
    /// Vertex indices of each component, in loop order.
    pub component_indices: Vec<Vec<usize>>,
    pub vertex_coords: Vec<Point>,
    pub soft_adjacency_summary: AdjacencySummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moved_vertices: Option<Vec<usize>>,
}

/// Builds the router with CORS and the upload size limit.
pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/predict", post(predict))
        .route("/sessions/{id}/correct", post(correct))
        .route("/sessions/{id}/export", get(export))
        .layer(DefaultBodyLimit::max(MAX_IMAGE_BYTES))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn create_session(
    State(app): State<AppState>,
    Query(params): Query<CreateParams>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Created>)> {
    if body.len() > MAX_IMAGE_BYTES {
        return Err(err(StatusCode::PAYLOAD_TOO_LARGE, "image exceeds 8 MiB"));
    }
    let img = image::load_from_memory_with_format(&body, image::ImageFormat::Png)
        .map_err(|e| err(StatusCode::BAD_REQUEST, format!("undecodable PNG: {e}")))?
        .to_rgb8();
    let id = uuid::Uuid::new_v4().simple().to_string();
    let name = params.name.unwrap_or_else(|| format!("session-{id}.png"));
    let now = SystemTime::now();
    app.sessions.insert(
        id.clone(),
        Session {
            image: Arc::new(img),
            image_name: name,
            created: now,
            updated: now,
            history: Vec::new(),
            current: None,
        },
    );
    Ok((StatusCode::CREATED, Json(Created { session_id: id })))
}

/// Prediction state kept between requests.
#[derive(Debug, Clone)]
pub struct Current {
    pub bbox: [f64; 4],
    pub class: String,
    pub frame: CropFrame,
    pub state: StateSnapshot,
    /// Clicked image coordinates of corrected vertices, reported verbatim.
    pub clicked: BTreeMap<usize, Point>,
}

fn to_image(frame: &CropFrame, p: Point) -> Point {
    let s = frame.size as f64;
    frame.to_source([p[0] * s, p[1] * s])
}

fn payload(cur: &Current, moved: Option<Vec<usize>>) -> Prediction {
    let st = &cur.state;
    let coords: Vec<Point> = st
        .points
        .iter()
        .enumerate()
        .map(|(i, &p)| cur.clicked.get(&i).copied().unwrap_or_else(|| to_image(&cur.frame, p)))
        .collect();
    let dec = splitgcn_core::model::decompose_components(&st.adjacency, &st.points);
    let comps = &dec.polygons.components;
    let n = st.adjacency.n;
    let (mut kept, mut cut) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in i + 1..n {
            let v = st.soft.get(i, j).max(st.soft.get(j, i));
            if st.adjacency.get(i, j) != 0.0 {
                kept.push(v);
            } else {
                cut.push(v);
            }
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Prediction {
        components: comps.iter().map(|c| c.iter().map(|&i| coords[i]).collect()).collect(),
        component_indices: comps.clone(),
        soft_adjacency_summary: AdjacencySummary {
            edges: kept.len(),
            components: comps.len(),
            mean_edge_score: mean(&kept),
            min_edge_score: kept.iter().copied().fold(f64::INFINITY, f64::min).min(1.0),
            mean_cut_score: mean(&cut),
        },
        vertex_coords: coords,
        moved_vertices: moved,
    }
}

async fn predict(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<PredictRequest>,
) -> ApiResult<Json<Prediction>> {
    let handle = app
        .sessions
        .get(&id)
        .ok_or_else(|| err(StatusCode::NOT_FOUND, format!("unknown session {id}")))?;
    let mut session = handle.lock().await;
    let (w, h) = (session.image.width() as f64, session.image.height() as f64);
    let [x, y, bw, bh] = req.bbox;
    if !req.bbox.iter().all(|v| v.is_finite()) || x < 0.0 || y < 0.0 || bw <= 0.0 || bh <= 0.0 || x + bw > w || y + bh > h {
        return Err(err(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("bbox {:?} is not inside the {w}×{h} image", req.bbox),
        ));
    }
    let frame = crop_frame(req.bbox, app.engine.config().image_size, Augment::IDENTITY);
    let engine = app.engine.clone();
    let image = session.image.clone();
    let state = tokio::task::spawn_blocking(move || engine.predict(&image, &frame))
        .await
        .map_err(|e| err(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| err(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let cur = Current {
        bbox: req.bbox,
        class: req.class.unwrap_or_else(|| "object".into()),
        frame,
        state,
        clicked: BTreeMap::new(),
    };
    let out = payload(&cur, None);
    session.current = Some(cur);
    session.updated = SystemTime::now();
    Ok(Json(out))
}

async fn correct(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<CorrectRequest>,
) -> ApiResult<Json<Prediction>> {
    let handle = app
        .sessions
        .get(&id)
        .ok_or_else(|| err(StatusCode::NOT_FOUND, format!("unknown session {id}")))?;
    let mut session = handle.lock().await;
    let Some(cur) = session.current.clone() else {
        return Err(err(StatusCode::CONFLICT, "no prediction yet"));
    };
    let n = cur.state.points.len();
    if req.vertex_index >= n {
        return Err(err(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("vertex index {} out of range 0..{n}", req.vertex_index),
        ));
    }
    let s = cur.frame.size as f64;
    let c = cur.frame.to_crop([req.x, req.y]);
    let mut target = [c[0] / s, c[1] / s];
    let here = cur.state.points[req.vertex_index];
    let current_px = to_image(&cur.frame, here);
    if cur.clicked.get(&req.vertex_index) == Some(&[req.x, req.y]) || current_px == [req.x, req.y] {
        target = here;
    }
    if !target.iter().all(|v| (0.0..=1.0).contains(v)) {
        return Err(err(StatusCode::UNPROCESSABLE_ENTITY, "target lies outside the predicted crop"));
    }
    let correction = Correction {
        vertex_index: req.vertex_index,
        target,
        source: splitgcn_core::interactive::Source::Human,
    };
    let engine = app.engine.clone();
    let before = cur.state.clone();
    let state = tokio::task::spawn_blocking(move || engine.correct(&before, &correction))
        .await
        .map_err(|e| err(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| err(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let moved: Vec<usize> = (0..n).filter(|&i| state.points[i] != cur.state.points[i]).collect();
    let mut next = Current { state, ..cur };
    if target != here {
        next.clicked.insert(req.vertex_index, [req.x, req.y]);
    }
    let out = payload(&next, Some(moved));
    session.current = Some(next);
    session.history.push(correction);
    session.updated = SystemTime::now();
    Ok(Json(out))
}

async fn export(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<InstanceRecord>> {
    let handle = app
        .sessions
        .get(&id)
        .ok_or_else(|| err(StatusCode::NOT_FOUND, format!("unknown session {id}")))?;
    let session = handle.lock().await;
    let Some(cur) = &session.current else {
        return Err(err(StatusCode::CONFLICT, "no prediction yet"));
    };
    let pred = payload(cur, None);
    let components: Vec<Vec<Point>> = pred.components.into_iter().filter(|c| c.len() >= 3).collect();
    let [x, y, w, h] = cur.bbox;
    let (mut lo, mut hi) = ([x, y], [x + w, y + h]);
    for p in components.iter().flatten() {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let record = InstanceRecord {
        image: session.image_name.clone(),
        class: cur.class.clone(),
        bbox: [lo[0], lo[1], hi[0] - lo[0], hi[1] - lo[1]],
        components,
    };
    record
        .validate()
        .map_err(|e| err(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(record))
}
