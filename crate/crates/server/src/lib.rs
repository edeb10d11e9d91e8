//! JSON API over one run directory, used by the curation UI.
//!
//! All routes live under `/api/v1`. The service holds the run lock for its
//! lifetime, so training commands against the same run refuse to start.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::{Mutex, RwLock, Semaphore};

use uvap_core::adjust_infer::{literal_sample, personalized_sample, InferenceRequest};
use uvap_core::augment::{Candidate, CurationDecision, PoolSet, Verdict};
use uvap_core::error::Error;
use uvap_core::runhub::{list_runs, now_seconds, Run, RunLock, Stage};
use uvap_core::synthdata::Image;
use uvap_core::toydiff::text::is_slot;
use uvap_core::toydiff::Checkpoint;

pub const PAGE_SIZE: usize = 50;
pub const PREVIEW_WORKERS: usize = 2;
pub const MAX_PREVIEW_COUNT: usize = 16;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Stage(_) | Error::Shortfall(_) | Error::Locked(_) => StatusCode::CONFLICT,
            Error::Validation(_)
            | Error::Config(_)
            | Error::Tokenization { .. }
            | Error::InvalidAttribute(_)
            | Error::EmptySet(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// Shared service state for one run.
pub struct AppState {
    root: PathBuf,
    run_id: String,
    run: Mutex<Run>,
    checkpoint: Arc<Checkpoint>,
    /// Previews hold it shared; finalize needs it exclusively.
    work: RwLock<()>,
    previews: Semaphore,
    appender: Mutex<()>,
    _lock: Option<RunLock>,
}

impl AppState {
    /// Opens `root/run_id` and takes its lock.
    pub fn open(root: &Path, run_id: &str) -> uvap_core::error::Result<Self> {
        Self::build(root, run_id, true)
    }

    /// Like [`AppState::open`] without taking the lock.
    pub fn open_unlocked(root: &Path, run_id: &str) -> uvap_core::error::Result<Self> {
        Self::build(root, run_id, false)
    }

    fn build(root: &Path, run_id: &str, lock: bool) -> uvap_core::error::Result<Self> {
        let run = Run::open(&root.join(run_id))?;
        run.state.require(Stage::CandidatesReady)?;
        let lock = if lock { Some(run.dir.acquire_lock()?) } else { None };
        let checkpoint = Arc::new(run.best_checkpoint()?);
        Ok(Self {
            root: root.to_path_buf(),
            run_id: run_id.to_string(),
            run: Mutex::new(run),
            checkpoint,
            work: RwLock::new(()),
            previews: Semaphore::new(PREVIEW_WORKERS),
            appender: Mutex::new(()),
            _lock: lock,
        })
    }

    /// Holds the run in the sampling state, as an in-flight preview does.
    pub async fn sampling(&self) -> tokio::sync::RwLockReadGuard<'_, ()> {
        self.work.read().await
    }

    fn check_id(&self, id: &str) -> ApiResult<()> {
        if id == self.run_id {
            Ok(())
        } else {
            Err(ApiError::not_found(format!("unknown run {id}")))
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/runs", get(list))
        .route("/runs/{id}/candidates", get(candidates))
        .route("/runs/{id}/images/{file}", get(candidate_image))
        .route("/runs/{id}/decisions", post(decide))
        .route("/runs/{id}/finalize", post(finalize))
        .route("/runs/{id}/preview", post(preview))
        .route("/runs/{id}/previews/{file}", get(preview_image))
        .route("/runs/{id}/reports/latest", get(latest_report));
    Router::new().nest("/api/v1", api).with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    pub stage: Stage,
}

async fn list(State(s): State<Arc<AppState>>) -> ApiResult<Json<Vec<RunSummary>>> {
    let runs = list_runs(&s.root)?;
    Ok(Json(runs.into_iter().map(|(id, stage)| RunSummary { id, stage }).collect()))
}

#[derive(Debug, Deserialize)]
pub struct CandidateQuery {
    pub set: Option<String>,
    #[serde(default)]
    pub page: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidateItem {
    pub id: u32,
    pub prompt: String,
    pub seed: u64,
    pub set: PoolSet,
    pub score: f64,
    pub auto_kept: bool,
    pub human_decision: uvap_core::augment::Decision,
    pub image_url: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidatePage {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub items: Vec<CandidateItem>,
}

async fn reviewed(s: &AppState) -> ApiResult<Vec<Candidate>> {
    let run = s.run.lock().await;
    Ok(run.reviewed_pool()?)
}

async fn candidates(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<CandidateQuery>,
) -> ApiResult<Json<CandidatePage>> {
    s.check_id(&id)?;
    let set: Option<PoolSet> = q.set.as_deref().map(str::parse).transpose()?;
    let mut kept: Vec<Candidate> = reviewed(&s)
        .await?
        .into_iter()
        .filter(|c| c.auto_kept && set.is_none_or(|t| c.set == t))
        .collect();
    kept.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    let total = kept.len();
    let items = kept
        .into_iter()
        .skip(q.page * PAGE_SIZE)
        .take(PAGE_SIZE)
        .map(|c| CandidateItem {
            image_url: format!("/api/v1/runs/{id}/images/{}.png", c.id),
            id: c.id,
            prompt: c.prompt,
            seed: c.seed,
            set: c.set,
            score: c.score,
            auto_kept: c.auto_kept,
            human_decision: c.human_decision,
        })
        .collect();
    Ok(Json(CandidatePage {
        total,
        page: q.page,
        page_size: PAGE_SIZE,
        items,
    }))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn candidate_image(
    State(s): State<Arc<AppState>>,
    UrlPath((id, file)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    s.check_id(&id)?;
    let cid: u32 = file
        .strip_suffix(".png")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| ApiError::not_found(format!("no image {file}")))?;
    let run = s.run.lock().await;
    let pool = run.pool()?;
    let c = pool
        .iter()
        .find(|c| c.id == cid)
        .ok_or_else(|| ApiError::not_found(format!("unknown candidate {cid}")))?;
    let path = run.dir.candidates().join(&c.path);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{}: {e}", path.display())))?;
    Ok(png(bytes))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecisionBody {
    pub candidate_id: u32,
    pub decision: Verdict,
    #[serde(default)]
    pub operator: Option<String>,
}

async fn decide(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<DecisionBody>,
) -> ApiResult<Json<serde_json::Value>> {
    s.check_id(&id)?;
    let _writer = s.appender.lock().await;
    let run = s.run.lock().await;
    let pool = run.pool()?;
    match pool.iter().find(|c| c.id == body.candidate_id) {
        None => return Err(ApiError::not_found(format!("unknown candidate {}", body.candidate_id))),
        Some(c) if !c.auto_kept => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("candidate {} was not auto-kept", c.id),
            ))
        }
        Some(_) => {}
    }
    run.record_decision(&CurationDecision {
        candidate_id: body.candidate_id,
        decision: body.decision,
        timestamp: now_seconds(),
        operator: body.operator.unwrap_or_else(|| "ui".into()),
    })?;
    Ok(Json(serde_json::json!({ "ok": true })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FinalizeBody {
    pub m: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FinalizeResponse {
    pub plus_count: usize,
    pub minus_count: usize,
}

async fn finalize(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<FinalizeBody>,
) -> ApiResult<Json<FinalizeResponse>> {
    s.check_id(&id)?;
    let _exclusive = s
        .work
        .try_write()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "preview sampling in progress"))?;
    let _writer = s.appender.lock().await;
    let mut run = s.run.lock().await;
    let (plus_count, minus_count) = run.finalize(body.m)?;
    Ok(Json(FinalizeResponse {
        plus_count,
        minus_count,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreviewBody {
    pub prompt: String,
    pub lambda: Option<f64>,
    pub seed: u64,
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PreviewResponse {
    pub images: Vec<String>,
}

fn preview_key(req: &InferenceRequest) -> String {
    let json = serde_json::to_vec(req).unwrap_or_default();
    hex::encode(&Sha256::digest(&json)[..8])
}

async fn preview(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<PreviewBody>,
) -> ApiResult<Json<PreviewResponse>> {
    s.check_id(&id)?;
    if body.count == 0 || body.count > MAX_PREVIEW_COUNT {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("count must lie in 1..={MAX_PREVIEW_COUNT}"),
        ));
    }
    let (req, exec, dir) = {
        let run = s.run.lock().await;
        let inf = &run.config.inference;
        let mut req = InferenceRequest::new(&body.prompt, body.lambda.unwrap_or(inf.lambda), body.seed, body.count);
        req.steps = inf.steps;
        req.guidance = inf.guidance;
        (req, run.exec, run.dir.samples().join("preview"))
    };
    let literal = !body.prompt.split_whitespace().any(is_slot);
    let _shared = s.work.read().await;
    let _permit = s
        .previews
        .acquire()
        .await
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "preview pool closed"))?;
    let ckpt = s.checkpoint.clone();
    let key = preview_key(&req);
    let images = tokio::task::spawn_blocking(move || -> uvap_core::error::Result<Vec<Image>> {
        if literal {
            literal_sample(&req, &ckpt, exec)
        } else {
            personalized_sample(&req, &ckpt, exec)
        }
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    tokio::fs::create_dir_all(&dir)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let mut urls = Vec::with_capacity(images.len());
    for (k, im) in images.iter().enumerate() {
        let name = format!("{key}_{k:02}.png");
        let bytes = im.to_png_bytes()?;
        tokio::fs::write(dir.join(&name), bytes)
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        urls.push(format!("/api/v1/runs/{id}/previews/{name}"));
    }
    Ok(Json(PreviewResponse { images: urls }))
}

async fn preview_image(
    State(s): State<Arc<AppState>>,
    UrlPath((id, file)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    s.check_id(&id)?;
    let valid = file.strip_suffix(".png").is_some_and(|stem| {
        !stem.is_empty() && stem.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
    });
    if !valid {
        return Err(ApiError::not_found(format!("no preview {file}")));
    }
    let path = s.run.lock().await.dir.samples().join("preview").join(&file);
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(png(bytes)),
        Err(_) => Err(ApiError::not_found(format!("no preview {file}"))),
    }
}

async fn latest_report(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<serde_json::Value>> {
    s.check_id(&id)?;
    let path = s.run.lock().await.dir.reports().join("latest.json");
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError::not_found("no report yet"))?;
    let v = serde_json::from_slice(&bytes).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(v))
}

/// Serves `root/run_id` on `bind` until interrupted.
pub async fn serve(root: &Path, run_id: &str, bind: SocketAddr) -> uvap_core::error::Result<()> {
    let state = Arc::new(AppState::open(root, run_id)?);
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| Error::Io {
            path: PathBuf::from(bind.to_string()),
            source: e,
        })?;
    log::info!("serving run {run_id} on http://{}", bind);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Io {
            path: PathBuf::from(bind.to_string()),
            source: e,
        })
}
