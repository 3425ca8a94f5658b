//! HTTP survey service: sessions, vignette payloads, submissions and
//! read-only results.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::aggregation::build_dem;
use crate::annotation::{assign_vignettes, AnnotationRecord, AnnotationStore, AnnotatorKind};
use crate::error::{Error, Result};
use crate::inference::{analyze, build_iem};
use crate::study::Study;
use crate::taxonomy::StudyConfig;
use crate::vignette::{find, AugmentedVignette, McqOption};

pub const DEFAULT_PORT: u16 = 8787;

#[derive(Clone, Debug)]
pub struct ServiceSettings {
    /// Vignettes per annotator.
    pub assignment_size: usize,
    pub seed: u64,
    /// When set, results endpoints require `Authorization: Bearer <token>`.
    pub results_token: Option<String>,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        ServiceSettings {
            assignment_size: 2,
            seed: 0,
            results_token: None,
            static_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionToken {
    pub token: String,
    pub annotator_id: String,
    pub assigned: Vec<String>,
    pub issued_at: DateTime<Utc>,
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VignettePayload {
    pub vignette_id: String,
    pub text: String,
    pub question: String,
    pub individual_options: Vec<McqOption>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub representational_question: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub representational_options: Option<Vec<McqOption>>,
    pub max_selections: usize,
    pub answered: bool,
}

impl VignettePayload {
    fn new(v: &AugmentedVignette, answered: bool) -> Self {
        VignettePayload {
            vignette_id: v.id().to_string(),
            text: v.vignette.text.clone(),
            question: v.vignette.question.clone(),
            individual_options: v.individual_options.clone(),
            representational_question: v.representational_question.clone(),
            representational_options: v.representational_options.clone(),
            max_selections: v.max_selections,
            answered,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct SessionRequest {
    /// Returning annotators pass their alias to resume their assignment.
    #[serde(default)]
    pub alias: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct Submission {
    pub token: String,
    pub vignette_id: String,
    #[serde(default)]
    pub individual_harms: Vec<String>,
    #[serde(default)]
    pub representational_harms: Vec<String>,
}

pub struct AppState {
    config: StudyConfig,
    corpus: Option<Vec<AugmentedVignette>>,
    store: Mutex<AnnotationStore>,
    sessions: Mutex<HashMap<String, SessionToken>>,
    settings: ServiceSettings,
}

fn random_hex(bytes: usize) -> String {
    let mut buf = vec![0u8; bytes];
    rand::rng().fill_bytes(&mut buf);
    hex::encode(buf)
}

impl AppState {
    pub fn new(config: StudyConfig, corpus: Option<Vec<AugmentedVignette>>, store: AnnotationStore, settings: ServiceSettings) -> Self {
        AppState {
            config,
            corpus,
            store: Mutex::new(store),
            sessions: Mutex::new(HashMap::new()),
            settings,
        }
    }

    /// State for a study directory. A study without a corpus is served in
    /// a not-loaded state.
    pub fn from_study(study: &Study, settings: ServiceSettings) -> Result<Self> {
        let (corpus, store) = match study.corpus() {
            Ok(c) => {
                let store = study.store(&c)?;
                (Some(c), store)
            }
            Err(Error::MissingArtifact { .. }) => (None, AnnotationStore::in_memory(&study.config.study_id)),
            Err(e) => return Err(e),
        };
        Ok(Self::new(study.config.clone(), corpus, store, settings))
    }

    fn corpus(&self) -> Result<&[AugmentedVignette]> {
        self.corpus.as_deref().ok_or(Error::NotLoaded("vignette corpus has not been built"))
    }

    fn store(&self) -> std::sync::MutexGuard<'_, AnnotationStore> {
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn sessions(&self) -> std::sync::MutexGuard<'_, HashMap<String, SessionToken>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn record_count(&self) -> usize {
        self.store().len()
    }

    pub fn snapshot_digest(&self) -> String {
        self.store().snapshot_digest()
    }
}

/// Error response wrapper.
pub struct ApiError(StatusCode, serde_json::Value);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotLoaded(_) => StatusCode::SERVICE_UNAVAILABLE,
            Error::Unknown { .. } => StatusCode::NOT_FOUND,
            Error::DuplicateAnnotation { .. } | Error::DuplicateId { .. } => StatusCode::CONFLICT,
            Error::CoverageGap(_) | Error::DegenerateTable(_) | Error::EmptyTally(_) => StatusCode::CONFLICT,
            Error::Selection(_) | Error::Invalid { .. } | Error::RecordMismatch { .. } | Error::Parse(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_json())
    }
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: &str) -> Self {
        ApiError(status, json!({ "error": { "kind": kind, "message": message } }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
}

fn session(state: &AppState, token: Option<&str>) -> ApiResult<SessionToken> {
    let token = token.ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "invalid-token", "session token required"))?;
    state
        .sessions()
        .get(token)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "invalid-token", "unknown session token"))
}

fn completed(store: &AnnotationStore, annotator: &str, assigned: &[String]) -> bool {
    assigned.iter().all(|v| store.contains(annotator, v))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "study_id": state.config.study_id,
        "domain": state.config.domain,
        "loaded": state.corpus.is_some(),
        "records": state.record_count(),
    }))
}

async fn start_session(State(state): State<Arc<AppState>>, body: Option<Json<SessionRequest>>) -> ApiResult<Json<serde_json::Value>> {
    let corpus = state.corpus()?;
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let annotator_id = match req.alias {
        Some(a) => a,
        None => format!("anon-{}", random_hex(8)),
    };
    let (assigned, done, next) = {
        let mut store = state.store();
        let assigned = assign_vignettes(&mut store, &annotator_id, corpus, state.settings.assignment_size, state.settings.seed)?;
        let next = assigned
            .iter()
            .find(|v| !store.contains(&annotator_id, v))
            .map(|v| find(corpus, v).map(|av| VignettePayload::new(av, false)))
            .transpose()?;
        (assigned.clone(), completed(&store, &annotator_id, &assigned), next)
    };
    let token = SessionToken {
        token: random_hex(32),
        annotator_id,
        assigned,
        issued_at: Utc::now(),
        completed: done,
    };
    state.sessions().insert(token.token.clone(), token.clone());
    Ok(Json(json!({ "session": token, "next": next })))
}

async fn get_vignette(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<Json<VignettePayload>> {
    let corpus = state.corpus()?;
    let s = session(&state, bearer(&headers).or(q.get("token").map(String::as_str)))?;
    if !s.assigned.contains(&id) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "unassigned", &format!("vignette `{id}` is not assigned to this session")));
    }
    let answered = state.store().contains(&s.annotator_id, &id);
    Ok(Json(VignettePayload::new(find(corpus, &id)?, answered)))
}

async fn submit(State(state): State<Arc<AppState>>, Json(sub): Json<Submission>) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let corpus = state.corpus()?;
    let s = session(&state, Some(&sub.token))?;
    if !s.assigned.contains(&sub.vignette_id) {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "unassigned",
            &format!("vignette `{}` is not assigned to this session", sub.vignette_id),
        ));
    }
    let record = AnnotationRecord {
        annotator_id: s.annotator_id.clone(),
        annotator_kind: AnnotatorKind::Human,
        vignette_id: sub.vignette_id.clone(),
        individual_harms: sub.individual_harms,
        representational_harms: sub.representational_harms,
        submitted_at: Utc::now(),
    };
    let (digest, done) = {
        let mut store = state.store();
        store.append(record, corpus)?;
        (store.snapshot_digest(), completed(&store, &s.annotator_id, &s.assigned))
    };
    if done {
        for t in state.sessions().values_mut().filter(|t| t.annotator_id == s.annotator_id) {
            t.completed = true;
        }
    }
    Ok((
        StatusCode::CREATED,
        Json(json!({ "status": "stored", "vignette_id": sub.vignette_id, "completed": done, "snapshot_digest": digest })),
    ))
}

fn authorize_results(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    match &state.settings.results_token {
        Some(t) if bearer(headers) != Some(t.as_str()) => {
            Err(ApiError::new(StatusCode::UNAUTHORIZED, "invalid-token", "results token required"))
        }
        _ => Ok(()),
    }
}

fn results(digest: String, data: impl Serialize) -> Json<serde_json::Value> {
    Json(json!({ "snapshot_digest": digest, "data": data }))
}

async fn dem(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<serde_json::Value>> {
    authorize_results(&state, &headers)?;
    let corpus = state.corpus()?;
    let store = state.store();
    let dem = build_dem(&store, corpus, &state.config)?;
    Ok(results(dem.snapshot_digest.clone(), dem))
}

async fn iem(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<serde_json::Value>> {
    authorize_results(&state, &headers)?;
    let corpus = state.corpus()?;
    let store = state.store();
    let dem = build_dem(&store, corpus, &state.config)?;
    let analysis = analyze(&store, corpus, &state.config)?;
    let iem = build_iem(&dem, &analysis, &state.config)?;
    Ok(results(iem.snapshot_digest.clone(), iem))
}

async fn omnibus(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<serde_json::Value>> {
    authorize_results(&state, &headers)?;
    let corpus = state.corpus()?;
    let analysis = analyze(&state.store(), corpus, &state.config)?;
    let rows: Vec<_> = analysis.stakeholders.iter().map(|s| &s.omnibus).collect();
    Ok(results(analysis.snapshot_digest.clone(), rows))
}

async fn residuals(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<serde_json::Value>> {
    authorize_results(&state, &headers)?;
    let corpus = state.corpus()?;
    let analysis = analyze(&state.store(), corpus, &state.config)?;
    let rows: Vec<_> = analysis
        .stakeholders
        .iter()
        .map(|s| json!({ "stakeholder_id": s.table.stakeholder_id, "residuals": s.residuals }))
        .collect();
    Ok(results(analysis.snapshot_digest.clone(), rows))
}

pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.settings.static_dir.clone();
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/session", post(start_session))
        .route("/api/vignettes/{id}", get(get_vignette))
        .route("/api/annotations", post(submit))
        .route("/api/matrices/dem", get(dem))
        .route("/api/matrices/iem", get(iem))
        .route("/api/stats/omnibus", get(omnibus))
        .route("/api/stats/residuals", get(residuals))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state)).await.map_err(|e| Error::io(addr.to_string(), e))
}
