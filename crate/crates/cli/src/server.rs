//! JSON-over-HTTP access to live sessions, versioned under `/v1`.
//!
//! Requests on different sessions run concurrently. A session handles one
//! request at a time: a step arriving while another is running is rejected
//! with 409 rather than queued.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use bellbench_core::estimation::{
    compute_s, compute_s_with, diagnose_records, diagnose_state, ChshResult, ChshRun, CountErrorModel,
    StateDiagnostics,
};
use bellbench_core::io::{parse_counts, ConfigFile};
use bellbench_core::{ChshAngles, CountRecord, Dials, Error as CoreError, LiveSession, SharedSession};

/// A live session and the configuration it was created from.
#[derive(Clone)]
pub struct SessionEntry {
    pub session: SharedSession,
    pub config: ConfigFile,
}

/// Every live session, keyed by an opaque id.
#[derive(Default)]
pub struct SessionRegistry {
    sessions: RwLock<HashMap<String, SessionEntry>>,
    next: AtomicU64,
}

impl SessionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&self, config: ConfigFile) -> Result<String, CoreError> {
        config.validate()?;
        let session = LiveSession::new(config.apparatus, config.source, config.dials)?;
        let n = self.next.fetch_add(1, Ordering::Relaxed);
        let id = format!("s{n:06}-{:08x}", config.apparatus.rng_seed as u32 ^ (n as u32).wrapping_mul(0x9e37_79b9));
        let entry = SessionEntry { session: SharedSession::new(session), config };
        self.sessions.write().unwrap_or_else(|p| p.into_inner()).insert(id.clone(), entry);
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<SessionEntry> {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    pub fn remove(&self, id: &str) -> bool {
        self.sessions.write().unwrap_or_else(|p| p.into_inner()).remove(id).is_some()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    detail: ErrorDetail,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, detail: ErrorDetail { code: code.into(), message: message.into(), path: None } }
    }

    fn not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session with id {id}"))
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Busy => ApiError::new(StatusCode::CONFLICT, "busy", e.to_string()),
            CoreError::NonConvergence { .. } => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "non_convergence", e.to_string()),
            CoreError::Io { .. } | CoreError::Json { .. } => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string())
            }
            _ => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(ErrorBody { error: self.detail })).into_response()
    }
}

/// JSON body extractor whose rejection names the offending field.
pub struct Json<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for Json<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", e.body_text()))?;
        let de = &mut serde_json::Deserializer::from_slice(&bytes);
        serde_path_to_error::deserialize(de).map(Json).map_err(|e| {
            let path = e.path().to_string();
            let mut err = ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", e.inner().to_string());
            err.detail.path = Some(path);
            err
        })
    }
}

type AppState = Arc<SessionRegistry>;
type ApiResult<T> = Result<axum::Json<T>, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub config: ConfigFile,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquireRequest {
    pub duration_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChshRequest {
    pub duration_s: f64,
    #[serde(default)]
    pub angles: Option<ChshAngles>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChshReport {
    pub angles: ChshAngles,
    pub records: Vec<CountRecord>,
    pub result: ChshResult,
}

/// A finished count table to analyze, given either as CSV text or as
/// records. Exactly one of the two must be present.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChshAnalysisRequest {
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub records: Option<Vec<CountRecord>>,
    #[serde(default)]
    pub angles: Option<ChshAngles>,
    /// Use `sqrt(N + 1)` count errors so empty cells are allowed.
    #[serde(default)]
    pub add_one: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseRequest {
    pub n00: f64,
    pub n9090: f64,
    pub n090: f64,
    pub n4545: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub sessions: usize,
}

pub fn router(registry: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session).delete(delete_session))
        .route("/v1/sessions/{id}/settings", post(set_settings))
        .route("/v1/sessions/{id}/reset", post(reset))
        .route("/v1/sessions/{id}/acquire", post(acquire))
        .route("/v1/sessions/{id}/records", get(records))
        .route("/v1/sessions/{id}/diagnostics", get(diagnostics))
        .route("/v1/sessions/{id}/chsh", post(chsh))
        .route("/v1/analysis/chsh", post(analyze_chsh))
        .route("/v1/analysis/diagnose", post(analyze_diagnose))
        .with_state(registry)
}

fn entry(registry: &SessionRegistry, id: &str) -> Result<SessionEntry, ApiError> {
    registry.get(id).ok_or_else(|| ApiError::not_found(id))
}

/// Run `f` on the session on the blocking pool, failing at once if the
/// session is busy.
async fn with_session<R: Send + 'static>(
    entry: SessionEntry,
    f: impl FnOnce(&mut LiveSession) -> Result<R, CoreError> + Send + 'static,
) -> Result<R, ApiError> {
    tokio::task::spawn_blocking(move || entry.session.try_with(f))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

async fn health(State(registry): State<AppState>) -> axum::Json<Health> {
    axum::Json(Health { status: "ok".into(), sessions: registry.len() })
}

async fn create_session(
    State(registry): State<AppState>,
    Json(config): Json<ConfigFile>,
) -> Result<(StatusCode, axum::Json<Created>), ApiError> {
    let id = registry.create(config.clone())?;
    Ok((StatusCode::CREATED, axum::Json(Created { id, config })))
}

async fn get_session(State(registry): State<AppState>, Path(id): Path<String>) -> ApiResult<Dials> {
    let entry = entry(&registry, &id)?;
    Ok(axum::Json(with_session(entry, |s| Ok(s.dials())).await?))
}

async fn delete_session(State(registry): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    if registry.remove(&id) {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::not_found(&id))
    }
}

async fn set_settings(
    State(registry): State<AppState>,
    Path(id): Path<String>,
    Json(dials): Json<Dials>,
) -> ApiResult<Dials> {
    let entry = entry(&registry, &id)?;
    let dials = with_session(entry, move |s| {
        s.set_dials(dials);
        Ok(s.dials())
    })
    .await?;
    Ok(axum::Json(dials))
}

async fn reset(State(registry): State<AppState>, Path(id): Path<String>) -> ApiResult<Dials> {
    let entry = entry(&registry, &id)?;
    let dials = with_session(entry, |s| {
        s.set_dials(s.initial_dials());
        Ok(s.dials())
    })
    .await?;
    Ok(axum::Json(dials))
}

async fn acquire(
    State(registry): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<AcquireRequest>,
) -> ApiResult<CountRecord> {
    let entry = entry(&registry, &id)?;
    Ok(axum::Json(with_session(entry, move |s| s.acquire(req.duration_s)).await?))
}

async fn records(State(registry): State<AppState>, Path(id): Path<String>) -> ApiResult<Vec<CountRecord>> {
    let entry = entry(&registry, &id)?;
    Ok(axum::Json(with_session(entry, |s| Ok(s.history().to_vec())).await?))
}

async fn diagnostics(State(registry): State<AppState>, Path(id): Path<String>) -> ApiResult<StateDiagnostics> {
    let entry = entry(&registry, &id)?;
    Ok(axum::Json(with_session(entry, |s| diagnose_records(s.history())).await?))
}

async fn chsh(
    State(registry): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ChshRequest>,
) -> ApiResult<ChshReport> {
    let entry = entry(&registry, &id)?;
    let angles = req.angles.unwrap_or(entry.config.angles);
    let report = with_session(entry, move |s| {
        let records = angles
            .settings()
            .into_iter()
            .map(|(alpha, beta)| s.step(alpha, beta, req.duration_s))
            .collect::<Result<Vec<_>, _>>()?;
        let result = compute_s(&ChshRun::from_records(&records, angles)?)?;
        Ok(ChshReport { angles, records, result })
    })
    .await?;
    Ok(axum::Json(report))
}

async fn analyze_chsh(Json(req): Json<ChshAnalysisRequest>) -> ApiResult<ChshResult> {
    let records = match (req.csv, req.records) {
        (Some(text), None) => parse_counts(&text)?,
        (None, Some(records)) => records,
        _ => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "malformed_body",
                "give exactly one of `csv` and `records`",
            ))
        }
    };
    let distinct = |f: fn(&CountRecord) -> f64| {
        let mut v: Vec<f64> = records.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if records.len() > 1 && (distinct(|r| r.alpha) < 2 || distinct(|r| r.beta) < 2) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "degenerate_angles",
            "every record shares one analyzer setting; turn both analyzers between acquisitions",
        ));
    }
    let model = if req.add_one { CountErrorModel::AddOne } else { CountErrorModel::Poisson };
    let run = ChshRun::from_records(&records, req.angles.unwrap_or_else(ChshAngles::canonical))?;
    Ok(axum::Json(compute_s_with(&run, model)?))
}

async fn analyze_diagnose(Json(req): Json<DiagnoseRequest>) -> ApiResult<StateDiagnostics> {
    Ok(axum::Json(diagnose_state(req.n00, req.n9090, req.n090, req.n4545)?))
}

pub async fn serve(host: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    eprintln!("listening on http://{}/v1", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(SessionRegistry::new())))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
