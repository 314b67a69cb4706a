//! HTTP API for running cases: record events, read the DCR marking and ask
//! for next best actions or what-if projections.
//!
//! Every response body carries `schema_version`. Errors look like
//! `{"schema_version": 1, "error": {"code": "case_not_found", "message": ".."}}`.

mod engine;
mod routes;
mod store;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use nextbest::eventlog::KpiMode;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;

pub use engine::{sha256_hex, Engine, EngineError};
pub use routes::ApiError;
pub use store::{CaseSession, CaseSnapshot, CaseStore, HistoryEntry, Journal, JournalEntry};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("journal {path}: {source}")]
    Journal { path: String, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Append-only JSONL file; sessions are restored from it at start.
    pub journal: Option<PathBuf>,
    pub default_k: usize,
    /// How a missing `kpi` on an appended event is filled in.
    pub kpi_mode: KpiMode,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            journal: None,
            default_k: 10,
            kpi_mode: KpiMode::default(),
        }
    }
}

pub struct Shared {
    engine: Arc<Engine>,
    store: CaseStore,
    journal: Option<Journal>,
    config: ServiceConfig,
}

/// Builds the router, restoring sessions from the journal if one is set.
pub fn app(engine: Arc<Engine>, config: ServiceConfig) -> Result<axum::Router, ServiceError> {
    let (store, journal) = match &config.journal {
        Some(path) => {
            let fail = |source| ServiceError::Journal {
                path: path.display().to_string(),
                source,
            };
            let entries = Journal::read(path).map_err(fail)?;
            let vocabulary = engine.vocabulary();
            let store = CaseStore::restore(entries, engine.graph(), |a| vocabulary.contains(a));
            (store, Some(Journal::open(path).map_err(fail)?))
        }
        None => (CaseStore::default(), None),
    };
    let shared = Shared {
        engine,
        store,
        journal,
        config,
    };
    Ok(routes::router(Arc::new(shared)))
}

pub async fn bind(addr: &str) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind {
        addr: addr.to_owned(),
        source,
    })
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve(
    listener: TcpListener,
    engine: Arc<Engine>,
    config: ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let app = app(engine, config)?;
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on http://{addr}");
    }
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServiceError::Serve)
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        if tokio::signal::ctrl_c().await.is_err() {
            std::future::pending::<()>().await;
        }
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    log::info!("shutting down");
}
