//! The prediction service. Every request reads one immutable snapshot of
//! the current artifact, so responses never mix two models; a reload is a
//! single pointer swap.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Map, Value};
use tokio::sync::mpsc;

use crate::artifact::{read_artifact_file, ModelArtifact};
use crate::ServeError;
use hutil_core::glm::ResolvedTerm;

/// A queued retrain trigger, labeled for the audit log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    Poll,
    Notify,
    Startup,
}

impl Trigger {
    pub fn label(&self) -> &'static str {
        match self {
            Trigger::Poll => "poll",
            Trigger::Notify => "notify",
            Trigger::Startup => "startup",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub artifact_path: PathBuf,
    /// When set, /admin/reload and /notify require `Authorization: Bearer`.
    pub admin_token: Option<String>,
}

pub struct ServiceState {
    current: RwLock<Option<Arc<ModelArtifact>>>,
    config: ServiceConfig,
    notify: RwLock<Option<mpsc::Sender<Trigger>>>,
}

impl ServiceState {
    /// Builds the state, loading the artifact when one exists on disk. A
    /// missing or invalid artifact leaves the service up without a model.
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        let current = match read_artifact_file(&config.artifact_path) {
            Ok(artifact) => Some(Arc::new(artifact)),
            Err(e) => {
                tracing::warn!("no artifact loaded at startup: {e}");
                None
            }
        };
        Arc::new(ServiceState {
            current: RwLock::new(current),
            config,
            notify: RwLock::new(None),
        })
    }

    /// One immutable snapshot; callers use it for the whole request.
    pub fn current(&self) -> Option<Arc<ModelArtifact>> {
        self.current.read().unwrap().clone()
    }

    /// Atomic swap to a new model.
    pub fn install(&self, artifact: Arc<ModelArtifact>) {
        *self.current.write().unwrap() = Some(artifact);
    }

    pub fn reload_from_disk(&self) -> Result<Arc<ModelArtifact>, ServeError> {
        let artifact = Arc::new(read_artifact_file(&self.config.artifact_path)?);
        self.install(artifact.clone());
        Ok(artifact)
    }

    pub fn artifact_path(&self) -> &std::path::Path {
        &self.config.artifact_path
    }

    /// Connects the /notify endpoint to a watcher's queue.
    pub fn attach_notify(&self, tx: mpsc::Sender<Trigger>) {
        *self.notify.write().unwrap() = Some(tx);
    }

    fn authorized(&self, headers: &HeaderMap) -> bool {
        match &self.config.admin_token {
            None => true,
            Some(token) => headers
                .get(axum::http::header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .map(|v| v == format!("Bearer {token}"))
                .unwrap_or(false),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PredictError {
    #[error("missing feature {0:?}")]
    MissingFeature(String),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("feature {0:?} must be a number")]
    NotNumeric(String),
    #[error("feature {0:?} must be a string level")]
    NotText(String),
    #[error("feature {variable:?} has unknown level {level:?}")]
    UnknownLevel { variable: String, level: String },
    #[error("feature {0:?} is not finite")]
    NonFinite(String),
}

impl PredictError {
    fn status(&self) -> StatusCode {
        match self {
            PredictError::NonFinite(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        }
    }

    fn feature(&self) -> &str {
        match self {
            PredictError::MissingFeature(f)
            | PredictError::UnknownFeature(f)
            | PredictError::NotNumeric(f)
            | PredictError::NotText(f)
            | PredictError::NonFinite(f) => f,
            PredictError::UnknownLevel { variable, .. } => variable,
        }
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Scores one feature object against an artifact's schema.
pub fn predict_artifact(
    artifact: &ModelArtifact,
    features: &Map<String, Value>,
) -> Result<f64, PredictError> {
    let schema = &artifact.feature_schema;
    // Validate the inputs term by term before touching coefficients.
    for term in &schema.terms {
        match term {
            ResolvedTerm::Numeric { variable } => {
                let value = features
                    .get(variable)
                    .ok_or_else(|| PredictError::MissingFeature(variable.clone()))?;
                let number = value
                    .as_f64()
                    .ok_or_else(|| PredictError::NotNumeric(variable.clone()))?;
                if !number.is_finite() {
                    return Err(PredictError::NonFinite(variable.clone()));
                }
            }
            ResolvedTerm::Categorical {
                variable,
                reference,
                levels,
            } => {
                let value = features
                    .get(variable)
                    .ok_or_else(|| PredictError::MissingFeature(variable.clone()))?;
                let text = value
                    .as_str()
                    .ok_or_else(|| PredictError::NotText(variable.clone()))?;
                if text != reference && !levels.iter().any(|l| l == text) {
                    return Err(PredictError::UnknownLevel {
                        variable: variable.clone(),
                        level: text.to_string(),
                    });
                }
            }
        }
    }
    for key in features.keys() {
        if !schema.terms.iter().any(|t| t.variable() == key) {
            return Err(PredictError::UnknownFeature(key.clone()));
        }
    }

    let mut eta = 0.0;
    for (column, beta) in schema.columns.iter().zip(&artifact.coefficients) {
        let x = match (&column.term, &column.level) {
            (None, _) => 1.0,
            (Some(_), None) => features[&column.variable].as_f64().unwrap(),
            (Some(_), Some(level)) => {
                if features[&column.variable].as_str().unwrap() == level {
                    1.0
                } else {
                    0.0
                }
            }
        };
        eta += beta * x;
    }
    Ok(sigmoid(eta))
}

fn no_model() -> Response {
    (
        StatusCode::SERVICE_UNAVAILABLE,
        Json(json!({"error": "no valid model loaded"})),
    )
        .into_response()
}

fn unauthorized() -> Response {
    (
        StatusCode::UNAUTHORIZED,
        Json(json!({"error": "unauthorized"})),
    )
        .into_response()
}

async fn healthz(State(state): State<Arc<ServiceState>>) -> Response {
    match state.current() {
        Some(artifact) => Json(json!({
            "status": "ok",
            "model_checksum": artifact.content_checksum,
        }))
        .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({"status": "no-model"})),
        )
            .into_response(),
    }
}

async fn model_info(State(state): State<Arc<ServiceState>>) -> Response {
    match state.current() {
        Some(artifact) => Json(json!({
            "format_version": artifact.format_version,
            "created_at": artifact.created_at,
            "feature_schema": artifact.feature_schema,
            "train_metrics": artifact.train_metrics,
            "data_manifest_hash": artifact.data_manifest_hash,
            "model_checksum": artifact.content_checksum,
        }))
        .into_response(),
        None => no_model(),
    }
}

async fn predict(State(state): State<Arc<ServiceState>>, body: String) -> Response {
    let Some(artifact) = state.current() else {
        return no_model();
    };
    let parsed: Value = match serde_json::from_str(&body) {
        Ok(v) => v,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(json!({
                    "error": format!("body is not valid JSON: {e}"),
                    "model_checksum": artifact.content_checksum,
                })),
            )
                .into_response();
        }
    };
    let Some(features) = parsed.as_object() else {
        return (
            StatusCode::BAD_REQUEST,
            Json(json!({
                "error": "body must be a JSON object of feature values",
                "model_checksum": artifact.content_checksum,
            })),
        )
            .into_response();
    };
    match predict_artifact(&artifact, features) {
        Ok(probability) => Json(json!({
            "probability": probability,
            "high_utilization": probability >= 0.5,
            "model_checksum": artifact.content_checksum,
        }))
        .into_response(),
        Err(e) => (
            e.status(),
            Json(json!({
                "error": e.to_string(),
                "feature": e.feature(),
                "model_checksum": artifact.content_checksum,
            })),
        )
            .into_response(),
    }
}

async fn admin_reload(State(state): State<Arc<ServiceState>>, headers: HeaderMap) -> Response {
    if !state.authorized(&headers) {
        return unauthorized();
    }
    match state.reload_from_disk() {
        Ok(artifact) => Json(json!({
            "reloaded": true,
            "model_checksum": artifact.content_checksum,
        }))
        .into_response(),
        Err(e) => {
            let kept = state.current().map(|a| a.content_checksum.clone());
            (
                StatusCode::SERVICE_UNAVAILABLE,
                Json(json!({
                    "error": format!("reload failed, previous model kept: {e}"),
                    "model_checksum": kept,
                })),
            )
                .into_response()
        }
    }
}

async fn notify(State(state): State<Arc<ServiceState>>, headers: HeaderMap) -> Response {
    if !state.authorized(&headers) {
        return unauthorized();
    }
    let sender = state.notify.read().unwrap().clone();
    let Some(tx) = sender else {
        return (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({"error": "no watcher attached"})),
        )
            .into_response();
    };
    match tx.try_send(Trigger::Notify) {
        Ok(()) => (
            StatusCode::ACCEPTED,
            Json(json!({
                "accepted": true,
                "model_checksum": state.current().map(|a| a.content_checksum.clone()),
            })),
        )
            .into_response(),
        Err(mpsc::error::TrySendError::Full(_)) => (
            StatusCode::TOO_MANY_REQUESTS,
            Json(json!({"error": "notify queue saturated"})),
        )
            .into_response(),
        Err(mpsc::error::TrySendError::Closed(_)) => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({"error": "watcher stopped"})),
        )
            .into_response(),
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/model", get(model_info))
        .route("/predict", post(predict))
        .route("/admin/reload", post(admin_reload))
        .route("/notify", post(notify))
        .with_state(state)
}

/// Binds the address and serves in a background task. Returns the bound
/// address (useful with port 0) and the task handle.
pub async fn start_service(
    state: Arc<ServiceState>,
    addr: SocketAddr,
) -> Result<(SocketAddr, tokio::task::JoinHandle<()>), ServeError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServeError::Io {
            path: PathBuf::from(addr.to_string()),
            source: e,
        })?;
    let bound = listener.local_addr().map_err(|e| ServeError::Io {
        path: PathBuf::from(addr.to_string()),
        source: e,
    })?;
    let app = router(state);
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("service stopped: {e}");
        }
    });
    Ok((bound, handle))
}
