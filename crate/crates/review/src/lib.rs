//! Annotation service for the human review loop: a leased FIFO queue of
//! dataset images, verdict recording into `verdicts.jsonl`, and running
//! tallies. The JSON contract is documented in `API.md` at the repository
//! root.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use platesmith_core::io::{append_verdict, encode_png, read_image, read_verdicts, resolve, Manifest, VerdictRecord};
use platesmith_core::metrics::{Category, FailureReason};
use platesmith_core::ocr::TemplateRecognizer;
use platesmith_core::{validate_plate, Validation};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

pub const VERDICT_LOG: &str = "verdicts.jsonl";
pub const DEFAULT_LEASE: Duration = Duration::from_secs(600);

/// Millisecond wall clock, swappable in tests.
pub trait Clock: Send + Sync + 'static {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Clock that only moves when told to.
#[derive(Clone, Default)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(Arc::new(AtomicU64::new(start_ms)))
    }

    pub fn advance(&self, d: Duration) {
        self.0.fetch_add(d.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

pub struct ServiceConfig {
    /// Dataset root holding `manifest.json`.
    pub dataset: PathBuf,
    /// Defaults to `<dataset>/verdicts.jsonl`.
    pub verdict_log: Option<PathBuf>,
    /// Directory served at `/` (the review UI bundle).
    pub static_dir: Option<PathBuf>,
    pub lease: Duration,
}

impl ServiceConfig {
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            dataset: dataset.into(),
            verdict_log: None,
            static_dir: None,
            lease: DEFAULT_LEASE,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Guess {
    pub text: String,
    pub confidences: Vec<f64>,
}

/// Review status of an item. `pending` until a verdict exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Pending,
    SuccessType1,
    SuccessEv,
    Failure { reason: FailureReason },
}

impl From<Category> for Status {
    fn from(c: Category) -> Self {
        match c {
            Category::SuccessType1 => Status::SuccessType1,
            Category::SuccessEv => Status::SuccessEv,
            Category::Failure { reason } => Status::Failure { reason },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReviewItem {
    pub id: String,
    /// URL of the PNG rendition.
    pub image: String,
    pub guess: Guess,
    #[serde(flatten)]
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_ms: Option<u64>,
}

/// Body of `POST /api/verdict`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictRequest {
    pub item_id: String,
    #[serde(flatten)]
    pub category: Category,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
    #[serde(default)]
    pub supersedes: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Stats {
    pub total: usize,
    pub reviewed: usize,
    pub pending: usize,
    /// Keys: `success_type1`, `success_ev`, `failure:<reason>`; all present.
    pub counts: BTreeMap<String, usize>,
    /// Successes over reviewed; null before the first verdict.
    pub success_rate: Option<f64>,
    /// EV successes over all successes; null without successes.
    pub ev_share: Option<f64>,
}

struct Dataset {
    root: PathBuf,
    /// Item id to manifest-relative image path, in id order.
    items: BTreeMap<String, String>,
}

struct Inner {
    dataset: std::result::Result<Dataset, String>,
    log: PathBuf,
    /// Latest verdict per item.
    verdicts: HashMap<String, VerdictRecord>,
    /// Item id to lease expiry (ms).
    leases: HashMap<String, u64>,
    guesses: HashMap<String, Guess>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Mutex<Inner>>,
    clock: Arc<dyn Clock>,
    lease_ms: u64,
    recognizer: Arc<TemplateRecognizer>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": msg.into() }),
        }
    }

    fn invalid(msg: impl Into<String>, reason: &str) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({ "error": msg.into(), "reason": reason }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn load_dataset(root: &Path) -> std::result::Result<Dataset, String> {
    let manifest = Manifest::load(root).map_err(|e| e.to_string())?;
    let items = manifest
        .items()
        .map(|(_, it)| (it.id.clone(), it.image.clone()))
        .collect();
    Ok(Dataset {
        root: root.to_path_buf(),
        items,
    })
}

impl AppState {
    /// Loads the manifest and replays the verdict log. An unloadable
    /// manifest is not fatal: the API then answers 503. A corrupt verdict log
    /// is fatal, since it is the only record of past work.
    pub fn open(cfg: &ServiceConfig, clock: Arc<dyn Clock>) -> platesmith_core::Result<Self> {
        let log = cfg
            .verdict_log
            .clone()
            .unwrap_or_else(|| cfg.dataset.join(VERDICT_LOG));
        let mut verdicts = HashMap::new();
        for rec in read_verdicts(&log)? {
            verdicts.insert(rec.item_id.clone(), rec);
        }
        Ok(AppState {
            inner: Arc::new(Mutex::new(Inner {
                dataset: load_dataset(&cfg.dataset),
                log,
                verdicts,
                leases: HashMap::new(),
                guesses: HashMap::new(),
            })),
            clock,
            lease_ms: cfg.lease.as_millis() as u64,
            recognizer: Arc::new(TemplateRecognizer::font()),
        })
    }
}

/// Builds the router. Static files, when configured, are served under `/`.
pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/queue/next", get(next_item))
        .route("/api/verdict", post(post_verdict))
        .route("/api/stats", get(stats))
        .route("/api/items/{id}", get(get_item))
        .route("/api/items/{id}/image", get(get_image))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds and serves until the process is stopped.
pub async fn serve(cfg: ServiceConfig, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let state = AppState::open(&cfg, Arc::new(SystemClock)).map_err(std::io::Error::other)?;
    let app = router(state, cfg.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}

fn dataset(inner: &Inner) -> ApiResult<&Dataset> {
    inner
        .dataset
        .as_ref()
        .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("manifest unavailable: {e}")))
}

impl AppState {
    fn guess(&self, inner: &mut Inner, id: &str) -> ApiResult<Guess> {
        if let Some(g) = inner.guesses.get(id) {
            return Ok(g.clone());
        }
        let ds = dataset(inner)?;
        let rel = ds
            .items
            .get(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown item {id}")))?;
        let img = resolve(&ds.root, rel)
            .and_then(|p| read_image(&p))
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        let r = self.recognizer.recognize(&img);
        let g = Guess {
            text: r.text,
            confidences: r.detections.iter().map(|d| d.confidence).collect(),
        };
        inner.guesses.insert(id.to_string(), g.clone());
        Ok(g)
    }

    fn item(&self, inner: &mut Inner, id: &str) -> ApiResult<ReviewItem> {
        let guess = self.guess(inner, id)?;
        let v = inner.verdicts.get(id);
        Ok(ReviewItem {
            id: id.to_string(),
            image: format!("/api/items/{id}/image"),
            guess,
            status: v.map_or(Status::Pending, |v| v.category.into()),
            text: v.and_then(|v| v.text.clone()),
            note: v.and_then(|v| v.note.clone()),
            timestamp_ms: v.map(|v| v.timestamp_ms),
        })
    }
}

async fn next_item(State(st): State<AppState>) -> ApiResult<Response> {
    let mut inner = st.inner.lock().await;
    let now = st.clock.now_ms();
    let ds = dataset(&inner)?;
    let next = ds
        .items
        .keys()
        .find(|id| !inner.verdicts.contains_key(*id) && inner.leases.get(*id).is_none_or(|&exp| exp <= now))
        .cloned();
    let Some(id) = next else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    inner.leases.insert(id.clone(), now + st.lease_ms);
    let item = st.item(&mut inner, &id)?;
    Ok(Json(item).into_response())
}

fn check_text(req: &VerdictRequest) -> ApiResult<Option<String>> {
    let text = req.text.as_ref().map(|t| t.trim().to_string()).filter(|t| !t.is_empty());
    if !req.category.is_success() {
        return Ok(text);
    }
    let Some(t) = text else {
        return Err(ApiError::invalid("success verdicts need the plate text", "missing_text"));
    };
    match validate_plate(&t) {
        Validation::Invalid(r) => Err(ApiError::invalid(format!("{t:?} is not a valid plate: {r}"), r.as_str())),
        Validation::Valid { ev } if ev != (req.category == Category::SuccessEv) => Err(ApiError::invalid(
            format!("{t:?} does not match status {}", req.category.label()),
            "status_mismatch",
        )),
        Validation::Valid { .. } => Ok(Some(t)),
    }
}

async fn post_verdict(State(st): State<AppState>, body: Bytes) -> ApiResult<Json<ReviewItem>> {
    let req: VerdictRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed verdict: {e}")))?;
    let mut inner = st.inner.lock().await;
    if !dataset(&inner)?.items.contains_key(&req.item_id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown item {}", req.item_id)));
    }
    let text = check_text(&req)?;
    let note = req.note.clone().filter(|n| !n.is_empty());
    if let Some(prev) = inner.verdicts.get(&req.item_id) {
        let same = prev.category == req.category && prev.text == text && prev.note == note;
        if same {
            return Ok(Json(st.item(&mut inner, &req.item_id)?));
        }
        if !req.supersedes {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("item {} already has a different verdict; resend with supersedes=true to correct it", req.item_id),
            ));
        }
    }
    let rec = VerdictRecord {
        supersedes: inner.verdicts.contains_key(&req.item_id),
        item_id: req.item_id.clone(),
        category: req.category,
        text,
        note,
        timestamp_ms: st.clock.now_ms(),
    };
    append_verdict(&inner.log, &rec).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    inner.leases.remove(&req.item_id);
    inner.verdicts.insert(req.item_id.clone(), rec);
    Ok(Json(st.item(&mut inner, &req.item_id)?))
}

fn category_keys() -> Vec<String> {
    let mut keys = vec![Category::SuccessType1.label(), Category::SuccessEv.label()];
    for reason in [
        FailureReason::Unreadable,
        FailureReason::BadPattern,
        FailureReason::InvalidPrefix,
        FailureReason::InvalidSuffix,
    ] {
        keys.push(Category::Failure { reason }.label());
    }
    keys
}

async fn stats(State(st): State<AppState>) -> ApiResult<Json<Stats>> {
    let inner = st.inner.lock().await;
    let ds = dataset(&inner)?;
    let mut counts: BTreeMap<String, usize> = category_keys().into_iter().map(|k| (k, 0)).collect();
    let mut reviewed = 0;
    let (mut success, mut ev) = (0, 0);
    for id in ds.items.keys() {
        if let Some(v) = inner.verdicts.get(id) {
            reviewed += 1;
            *counts.entry(v.category.label()).or_default() += 1;
            success += usize::from(v.category.is_success());
            ev += usize::from(v.category == Category::SuccessEv);
        }
    }
    let total = ds.items.len();
    Ok(Json(Stats {
        total,
        reviewed,
        pending: total - reviewed,
        counts,
        success_rate: (reviewed > 0).then(|| success as f64 / reviewed as f64),
        ev_share: (success > 0).then(|| ev as f64 / success as f64),
    }))
}

async fn get_item(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<ReviewItem>> {
    let mut inner = st.inner.lock().await;
    Ok(Json(st.item(&mut inner, &id)?))
}

async fn get_image(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let path = {
        let inner = st.inner.lock().await;
        let ds = dataset(&inner)?;
        let rel = ds
            .items
            .get(&id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown item {id}")))?;
        resolve(&ds.root, rel).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    };
    let png = tokio::task::spawn_blocking(move || read_image(&path).and_then(|img| encode_png(&img)))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
