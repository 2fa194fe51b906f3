//! HTTP API around deferred-oracle campaigns: a client creates a campaign
//! over a candidate grid, asks for the next experiment, runs it, and posts
//! the measurement back.
//!
//! Routes:
//!
//! - `POST /campaigns` creates a session and lists its warm-up experiments
//! - `GET /campaigns` lists session ids
//! - `GET /campaigns/{id}/suggestion` returns the pending experiment or the final report
//! - `POST /campaigns/{id}/observations` ingests a measurement
//! - `GET /campaigns/{id}/state` returns everything needed to redraw a view
//! - `GET /campaigns/{id}/log` returns the observation log as JSON lines
//! - `GET /campaigns/{id}/report` returns the final report once done
//!
//! With a store directory, each session keeps `session.json` and an
//! append-only `log.jsonl`; sessions are rebuilt by replay on startup.

pub mod error;
pub mod session;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tower_http::cors::CorsLayer;
use tower_http::trace::TraceLayer;

pub use error::{ApiError, ErrorBody};
pub use session::{
    CreateCampaign, Created, Observation, ObservationResult, PendingSuggestion, PointPosterior, Prediction, Session,
    StateView, SuggestionBody,
};

struct Handle {
    /// Single writer per session.
    session: Mutex<Session>,
    /// Readers see the view published after the last mutation.
    view: RwLock<Arc<StateView>>,
}

impl Handle {
    fn new(session: Session) -> Arc<Handle> {
        let view = Arc::new(session.view());
        Arc::new(Handle {
            session: Mutex::new(session),
            view: RwLock::new(view),
        })
    }

    fn view(&self) -> Arc<StateView> {
        self.view.read().expect("view lock").clone()
    }

    /// Runs `f` under the writer lock and republishes the view.
    fn mutate<T>(&self, f: impl FnOnce(&mut Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut s = self.session.lock().map_err(|_| ApiError::internal("session lock poisoned"))?;
        let out = f(&mut s);
        *self.view.write().expect("view lock") = Arc::new(s.view());
        out
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<BTreeMap<String, Arc<Handle>>>>,
    store: Option<PathBuf>,
}

impl AppState {
    pub fn in_memory() -> Self {
        AppState::default()
    }

    /// Opens (or creates) a store directory and restores every session in it.
    pub fn persistent(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut sessions = BTreeMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if !path.is_dir() {
                continue;
            }
            match Session::restore(&path) {
                Ok(s) => {
                    tracing::info!(id = %s.id, log = s.state().log().len(), "restored campaign");
                    sessions.insert(s.id.clone(), Handle::new(s));
                }
                Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping unreadable session"),
            }
        }
        Ok(AppState {
            sessions: Arc::new(RwLock::new(sessions)),
            store: Some(dir),
        })
    }

    pub fn store(&self) -> Option<&Path> {
        self.store.as_deref()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, id: &str) -> Result<Arc<Handle>, ApiError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/campaigns", post(create).get(list))
        .route("/campaigns/{id}/suggestion", get(suggestion))
        .route("/campaigns/{id}/observations", post(observe))
        .route("/campaigns/{id}/state", get(state_view))
        .route("/campaigns/{id}/log", get(log))
        .route("/campaigns/{id}/report", get(report))
        .layer(CorsLayer::permissive())
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Parses a JSON body, reporting the offending field path on failure.
fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let field = (path != ".").then_some(path);
        ApiError::bad_request("invalid_body", e.inner().to_string(), field.as_deref())
    })
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn create(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateCampaign = parse(&body)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let store = app.store.clone();
    let session = blocking(move || Session::create(id, req, store.as_deref())).await?;
    let created = session.created();
    tracing::info!(id = %created.id, warmup = created.warmup_count, "created campaign");
    app.sessions
        .write()
        .expect("session map lock")
        .insert(created.id.clone(), Handle::new(session));
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn list(State(app): State<AppState>) -> Json<Vec<String>> {
    Json(app.sessions.read().expect("session map lock").keys().cloned().collect())
}

async fn suggestion(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SuggestionBody>, ApiError> {
    let h = app.get(&id)?;
    if let Some(p) = &h.view().pending {
        return Ok(Json(SuggestionBody::Pending(p.clone())));
    }
    let body = blocking(move || h.mutate(|s| s.suggestion())).await?;
    Ok(Json(body))
}

async fn observe(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<ObservationResult>, ApiError> {
    let h = app.get(&id)?;
    let obs: Observation = parse(&body)?;
    let out = blocking(move || h.mutate(|s| s.observe(&obs))).await?;
    Ok(Json(out))
}

async fn state_view(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<StateView>, ApiError> {
    Ok(Json(app.get(&id)?.view().as_ref().clone()))
}

async fn log(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let view = app.get(&id)?.view();
    let mut out = String::new();
    for e in &view.log {
        out.push_str(&serde_json::to_string(e).map_err(|e| ApiError::internal(e.to_string()))?);
        out.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response())
}

async fn report(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let h = app.get(&id)?;
    if h.view().status != "done" {
        return Err(ApiError::conflict("not_done", "the campaign has not finished"));
    }
    let r = blocking(move || h.session.lock().map_err(|_| ApiError::internal("session lock poisoned"))?.report()).await?;
    Ok(Json(r).into_response())
}
