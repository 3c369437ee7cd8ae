//! Session HTTP API under `/api/v1`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use irplan_core::model::{build_synthetic, ResponseModel, SyntheticConfig};
use irplan_core::retrieval::KnowledgeBase;
use irplan_core::session::{create_session, Session, SessionError, SessionStatus, StepDecision};
use irplan_core::{Incident, PlanResult, PlannerConfig, RecoveryState};

use crate::config::{llm_model, synthetic_for, AppConfig, BackendKind, LlmWiring};

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Unprocessable(String),
    Conflict(String),
    Internal(String),
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::NotFound(_) => ApiError::NotFound(e.to_string()),
            SessionError::Validation(_) => ApiError::Unprocessable(e.to_string()),
            SessionError::Conflict(_) => ApiError::Conflict(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(serde_json::json!({ "error": message }))).into_response()
    }
}

/// Body of `POST /sessions`. Omitted settings fall back to the server's.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub incident: Incident,
    #[serde(default)]
    pub config: Option<PlannerConfig>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub incident_id: String,
    pub status: SessionStatus,
    pub steps: usize,
    pub current_state: RecoveryState,
}

/// What a snapshot file holds: enough to rebuild the session's model.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Snapshot {
    session: Session,
    synthetic: Option<SyntheticConfig>,
}

struct Slot {
    /// Held for the whole of a mutation, so each session changes one
    /// request at a time.
    writer: Mutex<()>,
    /// Last committed state; reads never wait on a running step.
    view: RwLock<Session>,
    model: Arc<dyn ResponseModel>,
    synthetic: Option<SyntheticConfig>,
}

pub struct ServiceConfig {
    pub app: AppConfig,
    pub backend: BackendKind,
    pub llm: LlmWiring,
    pub kb: KnowledgeBase,
    pub snapshot_dir: Option<PathBuf>,
}

pub struct AppState {
    config: ServiceConfig,
    sessions: RwLock<BTreeMap<String, Arc<Slot>>>,
}

fn parse<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::Unprocessable(e.to_string()))
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::Internal(e.to_string())
}

impl AppState {
    pub fn new(config: ServiceConfig) -> anyhow::Result<Arc<Self>> {
        let state = Arc::new(AppState {
            config,
            sessions: RwLock::new(BTreeMap::new()),
        });
        state.restore()?;
        Ok(state)
    }

    fn model(&self, incident: &Incident, synthetic: Option<&SyntheticConfig>) -> anyhow::Result<(Arc<dyn ResponseModel>, Option<SyntheticConfig>)> {
        match self.config.backend {
            BackendKind::Synthetic => {
                let cfg = synthetic
                    .cloned()
                    .unwrap_or_else(|| synthetic_for(&self.config.app.synthetic, incident));
                Ok((Arc::new(build_synthetic(&cfg)?), Some(cfg)))
            }
            BackendKind::Llm => Ok((llm_model(&self.config.app.llm, &self.config.llm)?, None)),
        }
    }

    fn restore(&self) -> anyhow::Result<()> {
        let Some(dir) = &self.config.snapshot_dir else { return Ok(()) };
        std::fs::create_dir_all(dir)?;
        let mut sessions = self.sessions.write().expect("session map poisoned");
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let snap: Snapshot = match std::fs::read(&path).map(|b| serde_json::from_slice(&b)) {
                Ok(Ok(s)) => s,
                _ => {
                    tracing::warn!(path = %path.display(), "skipping unreadable snapshot");
                    continue;
                }
            };
            let (model, synthetic) = self.model(&snap.session.incident, snap.synthetic.as_ref())?;
            sessions.insert(
                snap.session.id.clone(),
                Arc::new(Slot {
                    writer: Mutex::new(()),
                    view: RwLock::new(snap.session),
                    model,
                    synthetic,
                }),
            );
        }
        Ok(())
    }

    fn persist(&self, session: &Session, synthetic: Option<&SyntheticConfig>) {
        let Some(dir) = &self.config.snapshot_dir else { return };
        let snap = Snapshot {
            session: session.clone(),
            synthetic: synthetic.cloned(),
        };
        let path = dir.join(format!("{}.json", session.id));
        let tmp = path.with_extension("json.tmp");
        let written = serde_json::to_vec(&snap)
            .map_err(std::io::Error::other)
            .and_then(|bytes| std::fs::write(&tmp, bytes))
            .and_then(|_| std::fs::rename(&tmp, &path));
        if let Err(e) = written {
            tracing::error!(session = %session.id, error = %e, "snapshot write failed");
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()).into())
    }

    fn view(&self, id: &str) -> Result<Session, ApiError> {
        Ok(self.slot(id)?.view.read().expect("session view poisoned").clone())
    }

    fn create(&self, request: CreateRequest) -> Result<Session, ApiError> {
        request
            .incident
            .validate()
            .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
        let config = request.config.unwrap_or_else(|| self.config.app.planner.clone());
        let (model, synthetic) = self
            .model(&request.incident, request.synthetic.as_ref())
            .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = create_session(id.clone(), &request.incident, config, model.as_ref(), &self.config.kb, None)?;
        self.persist(&session, synthetic.as_ref());
        self.sessions.write().expect("session map poisoned").insert(
            id,
            Arc::new(Slot {
                writer: Mutex::new(()),
                view: RwLock::new(session.clone()),
                model,
                synthetic,
            }),
        );
        Ok(session)
    }

    fn step(&self, id: &str, decision: StepDecision) -> Result<Session, ApiError> {
        let slot = self.slot(id)?;
        let _guard = slot.writer.lock().expect("session writer poisoned");
        let mut session = slot.view.read().expect("session view poisoned").clone();
        session.step(&decision, slot.model.as_ref())?;
        self.persist(&session, slot.synthetic.as_ref());
        *slot.view.write().expect("session view poisoned") = session.clone();
        Ok(session)
    }

    fn list(&self) -> Vec<SessionSummary> {
        let slots: Vec<Arc<Slot>> = self.sessions.read().expect("session map poisoned").values().cloned().collect();
        slots
            .iter()
            .map(|slot| {
                let s = slot.view.read().expect("session view poisoned");
                SessionSummary {
                    id: s.id.clone(),
                    incident_id: s.incident.id.clone(),
                    status: s.status,
                    steps: s.steps.len(),
                    current_state: s.current_state,
                }
            })
            .collect()
    }
}

async fn create_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<Session>), ApiError> {
    let request: CreateRequest = parse(&body)?;
    let session = tokio::task::spawn_blocking(move || state.create(request))
        .await
        .map_err(join_error)??;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn list_handler(State(state): State<Arc<AppState>>) -> Json<Vec<SessionSummary>> {
    Json(state.list())
}

async fn get_handler(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Session>, ApiError> {
    state.view(&id).map(Json)
}

async fn step_handler(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Session>, ApiError> {
    let decision: StepDecision = parse(&body)?;
    let session = tokio::task::spawn_blocking(move || state.step(&id, decision))
        .await
        .map_err(join_error)??;
    Ok(Json(session))
}

async fn export_handler(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<PlanResult>, ApiError> {
    Ok(Json(state.view(&id)?.export()?))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/sessions", post(create_handler).get(list_handler))
        .route("/api/v1/sessions/{id}", get(get_handler))
        .route("/api/v1/sessions/{id}/step", post(step_handler))
        .route("/api/v1/sessions/{id}/export", get(export_handler))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
