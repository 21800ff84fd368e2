//! HTTP front end for modeling sessions.
//!
//! Every mutating request runs on a bounded worker pool while holding the
//! session's write lock, so one session never sees two concurrent writers.
//! A request that has not finished within `sync_timeout` answers `202` with
//! a job id that `GET /v1/jobs/{id}` resolves once the work completes.

mod store;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use strandforge::formats::{write_orientation_fmap, write_vfld};
use strandforge::pipeline::{
    Backend, EditRequest, ExportFormat, Models, Operation, Outcome, Session, SessionConfig, StrokeSet,
};
use strandforge::{Error, ViewPose};
use tokio::sync::{oneshot, RwLock as AsyncRwLock, Semaphore};

pub use store::{sha256_hex, BlobStore, SessionRecord};

pub const API_VERSION: &str = "v1";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Sessions are persisted here when set.
    pub data_dir: Option<PathBuf>,
    pub sync_timeout: Duration,
    pub workers: usize,
    pub session: SessionConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { data_dir: None, sync_timeout: Duration::from_secs(2), workers: 2, session: SessionConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Job {
    Running,
    Done { result: Value },
    Failed { code: u16, error: String },
}

type SharedSession = Arc<AsyncRwLock<Session>>;

pub struct AppState {
    cfg: ServiceConfig,
    models: Models,
    store: Option<BlobStore>,
    sessions: RwLock<HashMap<String, SharedSession>>,
    jobs: Mutex<HashMap<String, Job>>,
    workers: Arc<Semaphore>,
}

impl AppState {
    /// Opens the state, replaying any sessions persisted under the data dir.
    pub fn open(cfg: ServiceConfig, models: Models) -> strandforge::Result<Arc<AppState>> {
        let store = cfg.data_dir.as_deref().map(BlobStore::open).transpose()?;
        let mut sessions = HashMap::new();
        if let Some(st) = &store {
            for rec in st.records()? {
                let s = Session::replay(&rec.bust, rec.backend, rec.config.clone(), models.clone(), &rec.history)?;
                let hash = s.strands.as_ref().map(strandforge::pipeline::strand_hash);
                if hash != rec.strands {
                    warn!("session {} replayed to a different strand hash", rec.id);
                }
                sessions.insert(rec.id.clone(), Arc::new(AsyncRwLock::new(s)));
            }
            info!("restored {} sessions", sessions.len());
        }
        Ok(Arc::new(AppState {
            workers: Arc::new(Semaphore::new(cfg.workers.max(1))),
            cfg,
            models,
            store,
            sessions: RwLock::new(sessions),
            jobs: Mutex::new(HashMap::new()),
        }))
    }

    fn session(&self, id: &str) -> Result<SharedSession, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session '{id}'")))
    }

    fn persist(&self, id: &str, s: &Session) -> strandforge::Result<()> {
        let Some(st) = &self.store else { return Ok(()) };
        let dense = s.dense.as_ref().map(|d| st.put(&write_orientation_fmap(d))).transpose()?;
        let field = s.field.as_ref().map(|f| st.put(&write_vfld(f))).transpose()?;
        let strands = s.strands.as_ref().map(|x| st.put(&strandforge::formats::write_hair(x))).transpose()?;
        st.save_record(&SessionRecord {
            id: id.to_string(),
            bust: s.bust_id.clone(),
            backend: s.backend,
            config: s.config.clone(),
            history: s.history().to_vec(),
            dense,
            field,
            strands,
        })?;
        Ok(())
    }
}

#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Invalid(_) | Error::Empty(_) | Error::Dimension(_) | Error::Format(_) | Error::Json(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/docs/api", get(api_doc))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(session_info))
        .route("/v1/sessions/{id}/sketch", post(sketch))
        .route("/v1/sessions/{id}/synthesize", post(synthesize))
        .route("/v1/sessions/{id}/view", post(view))
        .route("/v1/sessions/{id}/edits", post(edit))
        .route("/v1/sessions/{id}/strands", get(strands))
        .route("/v1/sessions/{id}/field2d", get(field2d))
        .route("/v1/sessions/{id}/field3d", get(field3d))
        .route("/v1/jobs/{id}", get(job))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn api_doc() -> Json<Value> {
    Json(json!({
        "version": API_VERSION,
        "endpoints": [
            "POST /v1/sessions {bust, backend}",
            "GET /v1/sessions/{id}",
            "POST /v1/sessions/{id}/sketch {width, height, strokes, contour}",
            "POST /v1/sessions/{id}/synthesize",
            "POST /v1/sessions/{id}/view {x_deg, y_deg, z_deg}",
            "POST /v1/sessions/{id}/edits {kind, ...}",
            "GET /v1/sessions/{id}/strands?format=hair|obj|json",
            "GET /v1/sessions/{id}/field2d",
            "GET /v1/sessions/{id}/field3d",
            "GET /v1/jobs/{id}",
            "GET /healthz"
        ],
        "binary": {"field2d": "FMAP", "field3d": "VFLD", "strands": "HAIR"}
    }))
}

#[derive(Debug, Deserialize)]
struct CreateRequest {
    #[serde(default = "default_bust")]
    bust: String,
    #[serde(default)]
    backend: Option<String>,
}

fn default_bust() -> String {
    "default".into()
}

async fn create_session(State(st): State<Arc<AppState>>, Json(req): Json<CreateRequest>) -> Result<Response, ApiError> {
    let backend = match &req.backend {
        Some(b) => Backend::parse(b)?,
        None => Backend::default(),
    };
    let s = Session::new(&req.bust, backend, st.cfg.session.clone(), st.models.clone())?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    st.persist(&id, &s)?;
    st.sessions.write().unwrap().insert(id.clone(), Arc::new(AsyncRwLock::new(s)));
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "bust": req.bust, "backend": backend }))).into_response())
}

async fn session_info(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let sess = st.session(&id)?;
    let s = sess.read().await;
    Ok(Json(json!({
        "id": id,
        "bust": s.bust_id,
        "backend": s.backend,
        "pose": s.pose,
        "version": s.version,
        "strands": s.strands.as_ref().map(strandforge::pipeline::strand_hash),
        "history": s.history(),
    })))
}

fn outcome_json(o: Outcome) -> Value {
    match o {
        Outcome::Dense(m) => json!({ "dense": m, "valid": m.valid_count() }),
        Outcome::Strands(s) => json!(s),
        Outcome::View(f) => json!({
            "field": sha256_hex(&write_vfld(&f)),
            "valid_cells": f.valid_count(),
        }),
    }
}

/// Applies `op` on the worker pool, answering synchronously when it finishes
/// within the timeout and with a job handle otherwise.
async fn run_op(st: Arc<AppState>, id: String, op: Operation) -> Result<Response, ApiError> {
    let sess = st.session(&id)?;
    let job_id = uuid::Uuid::new_v4().simple().to_string();
    st.jobs.lock().unwrap().insert(job_id.clone(), Job::Running);
    let (tx, rx) = oneshot::channel();
    let worker = st.clone();
    let jid = job_id.clone();
    tokio::spawn(async move {
        let permit = worker.workers.clone().acquire_owned().await;
        let mut guard = sess.write_owned().await;
        let w = worker.clone();
        let res = tokio::task::spawn_blocking(move || {
            let out = guard.apply(&op)?;
            w.persist(&id, &guard)?;
            Ok::<_, Error>(outcome_json(out))
        })
        .await;
        drop(permit);
        let job = match res {
            Ok(Ok(v)) => Job::Done { result: v },
            Ok(Err(e)) => {
                let ApiError(code, error) = e.into();
                Job::Failed { code: code.as_u16(), error }
            }
            Err(e) => Job::Failed { code: 500, error: format!("worker panicked: {e}") },
        };
        worker.jobs.lock().unwrap().insert(jid, job.clone());
        let _ = tx.send(job);
    });
    // A zero timeout always answers with a job handle.
    let waited = if st.cfg.sync_timeout.is_zero() { None } else { tokio::time::timeout(st.cfg.sync_timeout, rx).await.ok() };
    match waited {
        Some(Ok(job)) => {
            st.jobs.lock().unwrap().remove(&job_id);
            Ok(job_response(job))
        }
        _ => Ok((StatusCode::ACCEPTED, Json(json!({ "job": job_id, "status": "running" }))).into_response()),
    }
}

fn job_response(job: Job) -> Response {
    match job {
        Job::Done { result } => Json(result).into_response(),
        Job::Failed { code, error } => {
            ApiError(StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR), error).into_response()
        }
        Job::Running => (StatusCode::ACCEPTED, Json(json!({ "status": "running" }))).into_response(),
    }
}

async fn sketch(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(strokes): Json<StrokeSet>,
) -> Result<Response, ApiError> {
    run_op(st, id, Operation::Sketch { strokes }).await
}

async fn synthesize(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    run_op(st, id, Operation::Synthesize).await
}

async fn view(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(pose): Json<ViewPose>,
) -> Result<Response, ApiError> {
    run_op(st, id, Operation::View { pose }).await
}

async fn edit(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(edit): Json<EditRequest>,
) -> Result<Response, ApiError> {
    run_op(st, id, Operation::Edit { edit }).await
}

#[derive(Debug, Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

fn binary(bytes: Vec<u8>, content_type: &'static str) -> Response {
    ([(header::CONTENT_TYPE, content_type)], Bytes::from(bytes)).into_response()
}

async fn strands(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<FormatQuery>,
) -> Result<Response, ApiError> {
    let format = ExportFormat::parse(q.format.as_deref().unwrap_or("hair"))?;
    let sess = st.session(&id)?;
    let bytes = sess.read().await.export(format)?;
    let ct = match format {
        ExportFormat::Hair => "application/octet-stream",
        ExportFormat::Obj => "text/plain",
        ExportFormat::Json => "application/json",
    };
    Ok(binary(bytes, ct))
}

async fn field2d(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let sess = st.session(&id)?;
    let s = sess.read().await;
    let d = s.dense.as_ref().ok_or_else(|| ApiError(StatusCode::NOT_FOUND, "session has no dense map".into()))?;
    Ok(binary(write_orientation_fmap(d), "application/octet-stream"))
}

async fn field3d(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let sess = st.session(&id)?;
    let f = sess.read().await.export_field().map_err(|e| ApiError(StatusCode::NOT_FOUND, e.to_string()))?;
    Ok(binary(write_vfld(&f), "application/octet-stream"))
}

async fn job(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let job = st.jobs.lock().unwrap().get(&id).cloned();
    match job {
        Some(Job::Running) => Ok(Json(json!({ "job": id, "status": "running" })).into_response()),
        Some(j) => Ok(Json(json!({ "job": id, "outcome": j })).into_response()),
        None => Err(ApiError(StatusCode::NOT_FOUND, format!("unknown job '{id}'"))),
    }
}
