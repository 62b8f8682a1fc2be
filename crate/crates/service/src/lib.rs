//! HTTP service over a seqlabel workspace: lists sequences, serves images and
//! masks, accepts the one manual annotation per sequence and propagates it.
//!
//! All routes live under `/api/v1`. Disk is the source of truth; every
//! request re-reads the manifest and sequence list. Writes are serialized by
//! an in-process queue and by the workspace lock file, so a CLI run holding
//! the lock makes uploads fail with 423 instead of interleaving.

mod api;
mod error;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::AtomicU64;
use std::sync::{Arc, Mutex};

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, put};
use axum::Router;
use seqlabel_core::pipeline::PropagateConfig;
use seqlabel_core::workspace::Workspace;

pub use api::{AnnotationSession, JobState, ReportDigest, SequenceDetail, SequenceEntry};
pub use error::ApiError;

pub const DEFAULT_PORT: u16 = 8077;
pub const DEFAULT_MAX_UPLOAD: usize = 64 << 20;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub workspace: PathBuf,
    /// Must match the flags given to `seqlabel merge` for the two paths to
    /// produce identical files.
    pub propagate: PropagateConfig,
    pub max_upload_bytes: usize,
}

impl ServiceConfig {
    pub fn new(workspace: impl Into<PathBuf>) -> Self {
        Self {
            workspace: workspace.into(),
            propagate: PropagateConfig::default(),
            max_upload_bytes: DEFAULT_MAX_UPLOAD,
        }
    }
}

pub(crate) struct AppState {
    pub ws: Workspace,
    pub propagate: PropagateConfig,
    pub writer: Arc<tokio::sync::Mutex<()>>,
    pub jobs: Mutex<BTreeMap<u64, JobState>>,
    pub next_job: AtomicU64,
}

pub fn router(config: ServiceConfig) -> Router {
    let state = Arc::new(AppState {
        ws: Workspace::new(config.workspace),
        propagate: config.propagate,
        writer: Arc::new(tokio::sync::Mutex::new(())),
        jobs: Mutex::new(BTreeMap::new()),
        next_job: AtomicU64::new(1),
    });
    let v1 = Router::new()
        .route("/sequences", get(api::list_sequences))
        .route("/sequences/{id}", get(api::get_sequence))
        .route(
            "/sequences/{id}/annotation",
            put(api::put_annotation).get(api::get_annotation),
        )
        .route("/sequences/{id}/images/{image_id}", get(api::get_image))
        .route(
            "/sequences/{id}/images/{image_id}/campseudo",
            get(api::get_campseudo),
        )
        .route("/sequences/{id}/images/{image_id}/merged", get(api::get_merged))
        .route("/legend", get(api::legend))
        .route("/metrics", get(api::metrics))
        .route("/jobs/{job_id}", get(api::get_job));
    Router::new()
        .nest("/api/v1", v1)
        .layer(DefaultBodyLimit::max(config.max_upload_bytes))
        .with_state(state)
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, workspace = %config.workspace.display(), "listening");
    axum::serve(listener, router(config)).await
}
