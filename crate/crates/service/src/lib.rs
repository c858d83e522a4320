//! HTTP facade over the moderation engine: content ingestion, decisions,
//! the human review queue, policy configuration and audits. All state lives
//! in one data directory as append-only JSON-lines files.

mod error;
mod jsonl;
mod reviews;
mod routes;
mod state;

use std::net::SocketAddr;

pub use error::ApiError;
pub use reviews::{ReviewBook, ReviewError, ReviewEvent, TaskRecord};
pub use routes::router;
pub use state::{
    system_clock, AppState, AuditRecord, AuditRequest, Clock, IngestReceipt, PolicyView,
    QueueEntry, ServiceConfig, ServiceError, VerdictReceipt, VerifyReport, DECISIONS_FILE,
    DEFAULT_PORT, POLICIES_FILE, REVIEWS_FILE,
};

/// Serves until Ctrl-C.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
