//! Response collection service: presents questions to anonymous sessions,
//! records answers and liking ratings in an append-only log, and reports
//! empirical difficulty statistics.

pub mod api;
pub mod stats;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;

use kgmcq_core::mcq::{read_mcqs, McqError};
use kgmcq_model::dataset::read_signals;
use kgmcq_model::ModelError;

pub use api::{router, AppState};
pub use stats::{corpus_stats, CorpusStats, McqStats};
pub use store::{replay, summaries_from_log, LogEvent, ResponseInput, ResponseRecord, Store};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown question `{0}`")]
    NotFound(String),
    #[error("session `{session}` already answered `{mcq_id}`")]
    Duplicate { session: String, mcq_id: String },
    #[error("`{mcq_id}` was not presented to session `{session}`")]
    NotPresented { session: String, mcq_id: String },
    #[error("option index {0} out of range 0..4")]
    InvalidOption(usize),
    #[error("liking {0} outside 0..=100")]
    InvalidLiking(i64),
    #[error("missing session token")]
    EmptySession,
    #[error("need at least two answered questions, have {answered}")]
    InsufficientData { answered: usize },
    #[error("no signals loaded; export unavailable")]
    NoSignals,
    #[error("response log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mcq(#[from] McqError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    pub mcqs: PathBuf,
    pub signals: Option<PathBuf>,
    pub log: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub seed: u64,
}

/// Loads questions, replays the log and builds the shared state.
pub fn load_state(cfg: &ServiceConfig) -> Result<AppState, ServiceError> {
    let mcqs = read_mcqs(&cfg.mcqs)?;
    let store = Store::open(mcqs, cfg.seed, &cfg.log)?;
    let signals = match &cfg.signals {
        Some(p) => read_signals(p)?,
        None => Vec::new(),
    };
    log::info!(
        "{} questions, {} responses replayed from {}",
        store.mcqs().len(),
        store.records().len(),
        cfg.log.display()
    );
    Ok(AppState::new(store, signals))
}

/// Serves until the process is stopped.
pub async fn serve(cfg: &ServiceConfig) -> Result<(), ServiceError> {
    let state = load_state(cfg)?;
    let app = router(state, cfg.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(cfg.addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
