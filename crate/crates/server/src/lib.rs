//! HTTP service for the interactive client.
//!
//! Uploaded panels are immutable and shared between requests; every analysis
//! is a pure function of the dataset bytes and the query parameters. Rendered
//! bodies are kept in an LRU cache, which is the only shared mutable state
//! besides the dataset registry.

pub mod cache;
pub mod contract;
pub mod error;

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::SystemTime;

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use flownet_core::ccc::{ccc_panel, CccOptions};
use flownet_core::decompose::decompose_network;
use flownet_core::preprocess::{normality_report, TransformConfig};
use flownet_core::DialoguePanel;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::cache::LruCache;
use crate::contract::{DatasetCreated, NetworkPayload};
use crate::error::ApiError;

pub const DEFAULT_LAMBDA: f64 = 0.8;
pub const DEFAULT_GAMMA: f64 = -0.5;
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const MAX_LAMBDA: f64 = 1.5;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error("data directory {path}: {source}")]
    DataDir {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("stored dataset {path}: {message}")]
    Replay { path: PathBuf, message: String },
    #[error("invalid CORS origin {0:?}")]
    Cors(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub max_upload_bytes: usize,
    pub cache_capacity: usize,
    /// Uploaded CSVs are written here and reloaded on start.
    pub data_dir: Option<PathBuf>,
    /// Allowed browser origin; `*` allows any.
    pub cors_origin: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            max_upload_bytes: 10 * 1024 * 1024,
            cache_capacity: 256,
            data_dir: None,
            cors_origin: None,
        }
    }
}

#[derive(Debug)]
pub struct DatasetHandle {
    pub id: String,
    pub panel: Arc<DialoguePanel>,
    pub transform: TransformConfig,
    pub created_at: SystemTime,
}

#[derive(Debug, Default)]
struct Registry {
    datasets: BTreeMap<String, Arc<DatasetHandle>>,
    next_seq: u64,
}

type CachedBody = Arc<Vec<u8>>;

#[derive(Debug)]
pub struct AppState {
    config: ServerConfig,
    registry: RwLock<Registry>,
    cache: Mutex<LruCache<String, CachedBody>>,
}

fn content_id(seq: u64, bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let hash: String = digest.iter().take(4).map(|b| format!("{b:02x}")).collect();
    format!("ds-{seq:04}-{hash}")
}

fn seq_of(id: &str) -> Option<u64> {
    id.strip_prefix("ds-")?.split('-').next()?.parse().ok()
}

impl AppState {
    /// Builds the state, reloading any datasets stored in the data directory
    /// in id order.
    pub fn new(config: ServerConfig) -> Result<Self, ServerError> {
        let mut registry = Registry {
            datasets: BTreeMap::new(),
            next_seq: 1,
        };
        if let Some(dir) = &config.data_dir {
            let dir_err = |source| ServerError::DataDir {
                path: dir.clone(),
                source,
            };
            std::fs::create_dir_all(dir).map_err(dir_err)?;
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(dir_err)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            for path in files {
                let id = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                let seq = seq_of(&id).ok_or_else(|| ServerError::Replay {
                    path: path.clone(),
                    message: "file name is not a dataset id".into(),
                })?;
                let panel = DialoguePanel::load_csv(&path).map_err(|e| ServerError::Replay {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                registry.next_seq = registry.next_seq.max(seq + 1);
                registry.datasets.insert(
                    id.clone(),
                    Arc::new(DatasetHandle {
                        id,
                        panel: Arc::new(panel),
                        transform: TransformConfig::default(),
                        created_at: SystemTime::now(),
                    }),
                );
            }
        }
        Ok(AppState {
            cache: Mutex::new(LruCache::new(config.cache_capacity)),
            config,
            registry: RwLock::new(registry),
        })
    }

    pub fn dataset(&self, id: &str) -> Option<Arc<DatasetHandle>> {
        self.registry.read().expect("registry lock").datasets.get(id).cloned()
    }

    pub fn dataset_ids(&self) -> Vec<String> {
        self.registry
            .read()
            .expect("registry lock")
            .datasets
            .keys()
            .cloned()
            .collect()
    }

    fn register(&self, panel: DialoguePanel, bytes: &[u8]) -> Result<Arc<DatasetHandle>, ApiError> {
        let mut reg = self.registry.write().expect("registry lock");
        let id = content_id(reg.next_seq, bytes);
        if let Some(dir) = &self.config.data_dir {
            std::fs::write(dir.join(format!("{id}.csv")), bytes)
                .map_err(|e| ApiError::internal(format!("cannot store dataset: {e}")))?;
        }
        reg.next_seq += 1;
        let handle = Arc::new(DatasetHandle {
            id: id.clone(),
            panel: Arc::new(panel),
            transform: TransformConfig::default(),
            created_at: SystemTime::now(),
        });
        reg.datasets.insert(id, handle.clone());
        Ok(handle)
    }

    fn cached(&self, key: &str) -> Option<CachedBody> {
        self.cache.lock().expect("cache lock").get(&key.to_string())
    }

    fn store(&self, key: String, body: CachedBody) {
        self.cache.lock().expect("cache lock").insert(key, body);
    }
}

fn cors_layer(origin: &str) -> Result<CorsLayer, ServerError> {
    let allow = if origin == "*" {
        AllowOrigin::any()
    } else {
        AllowOrigin::exact(HeaderValue::from_str(origin).map_err(|_| ServerError::Cors(origin.to_string()))?)
    };
    Ok(CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE]))
}

pub fn router(state: Arc<AppState>) -> Result<Router, ServerError> {
    let cors = state.config.cors_origin.as_deref().map(cors_layer).transpose()?;
    let app = Router::new()
        .route("/datasets", post(upload).layer(DefaultBodyLimit::disable()))
        .route("/datasets/{id}", get(dataset_info))
        .route("/datasets/{id}/network", get(network))
        .route("/datasets/{id}/ccc", get(ccc))
        .route("/datasets/{id}/normality", get(normality))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state);
    Ok(match cors {
        Some(layer) => app.layer(layer),
        None => app,
    })
}

pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener, ServerError> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::Bind { addr, source })
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> Result<(), ServerError> {
    axum::serve(listener, router(state)?).await?;
    Ok(())
}

fn json_response(status: StatusCode, body: CachedBody) -> Response {
    let mut resp = Response::new(Body::from(Bytes::from(body.as_ref().clone())));
    *resp.status_mut() = status;
    resp.headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    resp
}

async fn upload(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Body) -> Result<Response, ApiError> {
    let limit = state.config.max_upload_bytes;
    let too_large = || {
        ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "payload_too_large",
            format!("upload exceeds {limit} bytes"),
        )
        .with_detail(json!({ "limit": limit }))
    };
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default();
    let essence = content_type.split(';').next().unwrap_or_default().trim();
    if !essence.eq_ignore_ascii_case("text/csv") {
        return Err(ApiError::new(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "unsupported_media_type",
            "upload must be sent as text/csv",
        )
        .with_detail(json!({ "content_type": content_type })));
    }
    let declared = headers
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<usize>().ok());
    if declared.is_some_and(|n| n > limit) {
        return Err(too_large());
    }
    let bytes = axum::body::to_bytes(body, limit).await.map_err(|_| too_large())?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "empty_body",
            "upload body is empty",
        ));
    }
    let panel = DialoguePanel::from_csv_reader(bytes.as_ref())?;
    let handle = state.register(panel, &bytes)?;
    let created = DatasetCreated {
        id: handle.id.clone(),
        periods: handle.panel.periods(),
        forecast_horizon: handle.panel.forecast_horizon(),
        response_horizon: handle.panel.response_horizon(),
    };
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn dataset_info(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let handle = state.dataset(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let p = &handle.panel;
    Ok(Json(json!({
        "id": handle.id,
        "periods": p.periods(),
        "forecast_horizon": p.forecast_horizon(),
        "response_horizon": p.response_horizon(),
        "events": p.event_sequence(),
        "period_labels": p.period_labels(),
    }))
    .into_response())
}

type Params = Query<HashMap<String, String>>;

fn number(params: &HashMap<String, String>, name: &str, default: f64) -> Result<f64, ApiError> {
    match params.get(name) {
        None => Ok(default),
        Some(raw) => raw
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| ApiError::bad_parameter(name, format!("{name} must be a finite number, got {raw:?}"))),
    }
}

/// Box-Cox exponent; `none` disables the transform.
fn gamma_param(params: &HashMap<String, String>, default: Option<f64>) -> Result<Option<f64>, ApiError> {
    match params.get("gamma").map(|s| s.trim()) {
        Some(s) if s.eq_ignore_ascii_case("none") => Ok(None),
        Some(_) => number(params, "gamma", 0.0).map(Some),
        None => Ok(default),
    }
}

fn key_part(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{:016x}", x.to_bits()))
}

/// Runs `compute` off the async runtime, caching the serialized body.
async fn cached_json<F>(state: Arc<AppState>, key: String, compute: F) -> Result<Response, ApiError>
where
    F: FnOnce() -> Result<Vec<u8>, ApiError> + Send + 'static,
{
    if let Some(body) = state.cached(&key) {
        return Ok(json_response(StatusCode::OK, body));
    }
    let body = tokio::task::spawn_blocking(compute)
        .await
        .map_err(|e| ApiError::internal(format!("analysis task failed: {e}")))??;
    let body = Arc::new(body);
    state.store(key, body.clone());
    Ok(json_response(StatusCode::OK, body))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, ApiError> {
    serde_json::to_vec(value).map_err(|e| ApiError::internal(format!("serialization failed: {e}")))
}

fn transform(gamma: Option<f64>) -> TransformConfig {
    TransformConfig {
        gamma,
        ..TransformConfig::default()
    }
}

async fn network(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(params): Params,
) -> Result<Response, ApiError> {
    let lambda = number(&params, "lambda", DEFAULT_LAMBDA)?;
    if !(0.0..=MAX_LAMBDA).contains(&lambda) {
        return Err(ApiError::bad_parameter(
            "lambda",
            format!("lambda must lie in [0, {MAX_LAMBDA}], got {lambda}"),
        ));
    }
    let gamma = gamma_param(&params, Some(DEFAULT_GAMMA))?;
    let handle = state.dataset(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let key = format!("{id}|network|{}|{}", key_part(Some(lambda)), key_part(gamma));
    cached_json(state, key, move || {
        let panel = transform(gamma).apply(&handle.panel)?;
        let net = decompose_network(&panel, lambda)?;
        to_json(&NetworkPayload::new(&net, gamma))
    })
    .await
}

async fn ccc(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(params): Params,
) -> Result<Response, ApiError> {
    let alpha = number(&params, "alpha", DEFAULT_ALPHA)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ApiError::bad_parameter(
            "alpha",
            format!("alpha must lie in [0, 1], got {alpha}"),
        ));
    }
    let gamma = gamma_param(&params, None)?;
    let handle = state.dataset(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let key = format!("{id}|ccc|{}|{}", key_part(Some(alpha)), key_part(gamma));
    cached_json(state, key, move || {
        let panel = transform(gamma).apply(&handle.panel)?;
        let mut solution = ccc_panel(&panel, alpha, &CccOptions::default())?;
        solution.preprocessing = Some(preprocessing_label(gamma));
        to_json(&solution)
    })
    .await
}

pub fn preprocessing_label(gamma: Option<f64>) -> String {
    match gamma {
        Some(g) => format!("box-cox gamma={g}, standardized"),
        None => "standardized".to_string(),
    }
}

async fn normality(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(params): Params,
) -> Result<Response, ApiError> {
    let gamma = gamma_param(&params, Some(DEFAULT_GAMMA))?;
    let handle = state.dataset(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let key = format!("{id}|normality|{}", key_part(gamma));
    cached_json(state, key, move || {
        let report = normality_report(&handle.panel, &transform(gamma))?;
        to_json(&report)
    })
    .await
}
