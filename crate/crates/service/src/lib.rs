//! HTTP classification service.
//!
//! Endpoints:
//! - `POST /classify`: multipart upload, first field carrying a file name.
//! - `POST /classify-url`: JSON `{"url": "..."}`.
//! - `GET /health`.
//! - `GET /`: static assets from [`ServiceConfig::static_dir`], or a
//!   built-in upload page.

pub mod error;
pub mod fetch;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::header::CONTENT_LENGTH;
use axum::http::{HeaderMap, StatusCode};
use axum::response::Html;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;
use tokio::io::AsyncWriteExt;
use tower_http::services::ServeDir;

use ddmd_core::audio_io::{supported_extension, Transcoder};
use ddmd_core::features::FEATURE_SCHEMA_VERSION;
use ddmd_core::forest::{load_model, ForestModel, MODEL_SCHEMA_VERSION};
use ddmd_core::pipeline::{extract_file, verdict, ExtractConfig};
use ddmd_core::Label;

pub use error::ApiError;
pub use fetch::DownloaderHook;

pub const DEFAULT_MAX_UPLOAD_BYTES: u64 = 50 * 1024 * 1024;
pub const MAX_UPLOAD_ENV: &str = "DDMD_MAX_UPLOAD_BYTES";
pub const DEFAULT_FETCH_TIMEOUT: Duration = Duration::from_secs(30);
/// Room for multipart boundaries and part headers on top of the file limit.
const MULTIPART_SLACK: u64 = 64 * 1024;

const INDEX_HTML: &str = include_str!("index.html");

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_upload_bytes: u64,
    pub fetch_timeout: Duration,
    pub static_dir: Option<PathBuf>,
    pub downloader: Option<DownloaderHook>,
    pub extract: ExtractConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            fetch_timeout: DEFAULT_FETCH_TIMEOUT,
            static_dir: None,
            downloader: None,
            extract: ExtractConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Defaults overridden by `DDMD_MAX_UPLOAD_BYTES`, `DDMD_DOWNLOADER`
    /// and `DDMD_TRANSCODER`.
    pub fn from_env() -> Result<Self, String> {
        let mut config = ServiceConfig::default();
        if let Ok(raw) = std::env::var(MAX_UPLOAD_ENV) {
            config.max_upload_bytes =
                raw.trim().parse().map_err(|_| format!("{MAX_UPLOAD_ENV}={raw:?} is not a byte count"))?;
        }
        config.downloader = DownloaderHook::from_env();
        config.extract.load.transcoder = Transcoder::from_env();
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub label: Label,
    /// Fraction of trees voting for `label`.
    pub confidence: f64,
    pub features_version: u32,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_loaded: bool,
    pub schema_version: u32,
}

#[derive(Debug, Clone, Deserialize)]
pub struct UrlRequest {
    pub url: String,
}

/// Shared, immutable request context.
#[derive(Debug)]
pub struct AppState {
    model: Option<ForestModel>,
    config: ServiceConfig,
    http: reqwest::Client,
}

impl AppState {
    pub fn new(model: Option<ForestModel>, config: ServiceConfig) -> Self {
        AppState { model, config, http: reqwest::Client::new() }
    }

    /// Loads the model if given; a missing or invalid file leaves the
    /// service running without one (classification answers 503).
    pub fn with_model_path(path: Option<&Path>, config: ServiceConfig) -> Self {
        let model = path.and_then(|p| match load_model(p) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("starting without a model: {e}");
                None
            }
        });
        AppState::new(model, config)
    }

    pub fn model_loaded(&self) -> bool {
        self.model.is_some()
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let body_limit =
        usize::try_from(state.config.max_upload_bytes.saturating_add(MULTIPART_SLACK)).unwrap_or(usize::MAX);
    let api = Router::new()
        .route("/classify", post(classify).layer(DefaultBodyLimit::max(body_limit)))
        .route("/classify-url", post(classify_url))
        .route("/health", get(health));
    let app = match &state.config.static_dir {
        Some(dir) if dir.is_dir() => api.fallback_service(ServeDir::new(dir)),
        other => {
            if let Some(dir) = other {
                log::warn!("static directory {} not found; serving built-in page", dir.display());
            }
            api.route("/", get(|| async { Html(INDEX_HTML) }))
        }
    };
    app.with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on http://{addr}");
    }
    axum::serve(listener, router(state)).await
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health { status: "ok".into(), model_loaded: state.model_loaded(), schema_version: MODEL_SCHEMA_VERSION })
}

async fn classify(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    mut multipart: Multipart,
) -> Result<Json<ClassifyResponse>, ApiError> {
    let started = Instant::now();
    if state.model.is_none() {
        return Err(ApiError::no_model());
    }
    let limit = state.config.max_upload_bytes;
    let declared = headers.get(CONTENT_LENGTH).and_then(|v| v.to_str().ok()).and_then(|v| v.parse::<u64>().ok());
    if declared.is_some_and(|n| n > limit.saturating_add(MULTIPART_SLACK)) {
        return Err(ApiError::too_large(limit));
    }

    while let Some(mut field) = multipart.next_field().await.map_err(multipart_error)? {
        let Some(name) = field.file_name().map(str::to_owned) else {
            continue;
        };
        let ext = supported_extension(Path::new(&name))
            .ok_or_else(|| ApiError::unsupported(format!("unsupported file type: {name:?}")))?;
        let file = tempfile::Builder::new()
            .prefix("ddmd-upload-")
            .suffix(&format!(".{ext}"))
            .tempfile()
            .map_err(|e| ApiError::internal(format!("creating temporary file: {e}")))?;
        let mut out = tokio::fs::File::from_std(file.reopen().map_err(|e| ApiError::internal(e.to_string()))?);
        let mut written = 0u64;
        while let Some(chunk) = field.chunk().await.map_err(multipart_error)? {
            written += chunk.len() as u64;
            if written > limit {
                return Err(ApiError::too_large(limit));
            }
            out.write_all(&chunk).await.map_err(|e| ApiError::internal(e.to_string()))?;
        }
        out.flush().await.map_err(|e| ApiError::internal(e.to_string()))?;
        return run_pipeline(state, file, started).await.map(Json);
    }
    Err(ApiError::bad_request("no file field in upload"))
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    let status = e.status();
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(status, "upload exceeds the size limit")
    } else {
        ApiError::new(status, e.body_text())
    }
}

async fn classify_url(
    State(state): State<Arc<AppState>>,
    Json(req): Json<UrlRequest>,
) -> Result<Json<ClassifyResponse>, ApiError> {
    let started = Instant::now();
    if state.model.is_none() {
        return Err(ApiError::no_model());
    }
    let url = fetch::parse_url(&req.url)?;
    let config = &state.config;
    let fetched = match &config.downloader {
        Some(hook) => fetch::fetch_with_hook(hook, &url, config.max_upload_bytes, config.fetch_timeout).await?,
        None => fetch::fetch_direct(&state.http, &url, config.max_upload_bytes, config.fetch_timeout).await?,
    };
    log::debug!("fetched {url} as .{}", fetched.extension);
    run_pipeline(state.clone(), fetched.file, started).await.map(Json)
}

/// Extraction and prediction on a blocking thread. The temporary file is
/// removed when this returns.
async fn run_pipeline(
    state: Arc<AppState>,
    file: NamedTempFile,
    started: Instant,
) -> Result<ClassifyResponse, ApiError> {
    tokio::task::spawn_blocking(move || {
        let model = state.model.as_ref().ok_or_else(ApiError::no_model)?;
        let features = extract_file(file.path(), &state.config.extract)?;
        let v = verdict(model, &features).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(ClassifyResponse {
            label: v.label,
            confidence: v.confidence,
            features_version: FEATURE_SCHEMA_VERSION,
            duration_ms: started.elapsed().as_millis() as u64,
        })
    })
    .await
    .map_err(|e| ApiError::internal(format!("extraction task failed: {e}")))?
}
