//! HTTP routes.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgmcq_core::RawSignals;
use kgmcq_model::dataset::{join_labels, write_table_to};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::stats::{corpus_stats, CorpusStats, McqStats};
use crate::store::{summarize, Ack, Next, ResponseInput, Store};
use crate::ServiceError;

#[derive(Clone)]
pub struct AppState {
    store: Arc<Mutex<Store>>,
    signals: Arc<BTreeMap<String, RawSignals>>,
}

impl AppState {
    pub fn new(store: Store, signals: Vec<(String, RawSignals)>) -> Self {
        Self { store: Arc::new(Mutex::new(store)), signals: Arc::new(signals.into_iter().collect()) }
    }

    /// Locks the store; every write goes through this single lock.
    pub fn store(&self) -> MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, code) = match &self {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Duplicate { .. } => (StatusCode::CONFLICT, "duplicate"),
            ServiceError::NotPresented { .. } => (StatusCode::CONFLICT, "not_presented"),
            ServiceError::InvalidOption(_) => (StatusCode::BAD_REQUEST, "invalid_option"),
            ServiceError::InvalidLiking(_) => (StatusCode::BAD_REQUEST, "invalid_liking"),
            ServiceError::EmptySession => (StatusCode::BAD_REQUEST, "missing_session"),
            ServiceError::InsufficientData { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "insufficient_data"),
            ServiceError::NoSignals => (StatusCode::UNPROCESSABLE_ENTITY, "no_signals"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(ErrorBody { error: code, message: self.to_string() })).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextBody {
    Question { mcq_id: String, stem: String, options: Vec<String>, answered: usize, total: usize },
    Complete { answered: usize, total: usize },
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    #[serde(default)]
    session: String,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

async fn next_question(
    State(state): State<AppState>,
    Query(q): Query<SessionQuery>,
) -> Result<Json<NextBody>, ServiceError> {
    let next = state.store().next_question(&q.session, now_ms())?;
    Ok(Json(match next {
        Next::Question(p) => NextBody::Question {
            mcq_id: p.mcq_id,
            stem: p.stem,
            options: p.options,
            answered: p.answered,
            total: p.total,
        },
        Next::Complete { answered, total } => NextBody::Complete { answered, total },
    }))
}

async fn record_response(
    State(state): State<AppState>,
    Json(input): Json<ResponseInput>,
) -> Result<Json<Ack>, ServiceError> {
    Ok(Json(state.store().record_response(&input, now_ms())?))
}

async fn mcq_stats(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<McqStats>, ServiceError> {
    let store = state.store();
    if store.mcq(&id).is_none() {
        return Err(ServiceError::NotFound(id));
    }
    Ok(Json(McqStats::from(&summarize(&id, store.responses_for(&id)))))
}

async fn corpus(State(state): State<AppState>) -> Result<Json<CorpusStats>, ServiceError> {
    let summaries = state.store().summaries();
    Ok(Json(corpus_stats(&summaries)?))
}

/// The labeled table in the layout the training stage reads.
async fn export(State(state): State<AppState>) -> Result<Response, ServiceError> {
    if state.signals.is_empty() {
        return Err(ServiceError::NoSignals);
    }
    let summaries = state.store().summaries();
    let signals: Vec<(String, RawSignals)> = state.signals.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let mut warnings = Vec::new();
    let rows = join_labels(&signals, &summaries, &mut warnings);
    let mut body = Vec::new();
    write_table_to(&mut body, &rows)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response())
}

/// API routes under `/api`, plus static files from `static_dir` for anything else.
pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/quiz/next", get(next_question))
        .route("/response", post(record_response))
        .route("/mcq/{id}/stats", get(mcq_stats))
        .route("/corpus/stats", get(corpus))
        .route("/export", get(export))
        .with_state(state);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app,
    }
}
