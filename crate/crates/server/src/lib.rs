//! JSON-over-HTTP facade for partial inverse design.
//!
//! Models are loaded read-only at startup and shared by every request;
//! handlers never mutate state, so identical requests get identical
//! responses regardless of order.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use mixinv::checkpoint::{bounds, scan_models, DatasetInfo, LoadedModel, VariableBounds};
use mixinv::cooperative::{infer_partial, InverseQuery, SurrogateMode, TrainMode};
use mixinv::data::{design_index, DESIGN_VARS};
use mixinv::imputation::Variant;
use mixinv::Error;

#[derive(Debug, Default)]
pub struct AppState {
    pub models: BTreeMap<String, LoadedModel>,
}

impl AppState {
    pub fn from_models(models: Vec<LoadedModel>) -> Self {
        AppState {
            models: models.into_iter().map(|m| (m.manifest.id.clone(), m)).collect(),
        }
    }

    pub fn load(dir: &Path) -> mixinv::Result<Self> {
        Ok(Self::from_models(scan_models(dir)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferRequest {
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    pub target_strength: f64,
    pub model: String,
    #[serde(default = "one")]
    pub candidates: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOut {
    pub design: BTreeMap<String, f64>,
    pub predicted_strength: f64,
    /// `predicted − target`, MPa.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub variant: Variant,
    pub mode: TrainMode,
    pub surrogate_mode: SurrogateMode,
    pub alpha: f64,
    pub seed: u64,
    pub dataset: DatasetInfo,
}

impl From<&LoadedModel> for ModelInfo {
    fn from(m: &LoadedModel) -> Self {
        let s = &m.manifest;
        ModelInfo {
            id: s.id.clone(),
            variant: s.variant,
            mode: s.mode,
            surrogate_mode: s.surrogate_mode,
            alpha: s.alpha,
            seed: s.seed,
            dataset: s.dataset.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferResponse {
    pub candidates: Vec<CandidateOut>,
    pub model: ModelInfo,
    pub bounds: Vec<VariableBounds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>, fields: Vec<FieldError>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: error.into(),
                fields,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn field(field: impl Into<String>, message: impl Into<String>) -> FieldError {
    FieldError {
        field: field.into(),
        message: message.into(),
    }
}

/// Every field-level problem with a request, not just the first.
fn field_errors(req: &InferRequest, variant: Variant) -> Vec<FieldError> {
    let mut out = Vec::new();
    for (name, &v) in &req.fixed {
        if design_index(name).is_none() {
            out.push(field(name, format!("unknown design variable; expected one of {}", DESIGN_VARS.join(","))));
        } else if !v.is_finite() || v < 0.0 {
            out.push(field(name, format!("must be a finite value >= 0, got {v}")));
        }
    }
    if !(req.target_strength.is_finite() && req.target_strength > 0.0) {
        out.push(field("target_strength", "must be a positive number of MPa"));
    }
    if req.candidates == 0 {
        out.push(field("candidates", "must be at least 1"));
    } else if req.candidates > 1 && !variant.is_generative() {
        out.push(field("candidates", "the dae variant is deterministic and yields one candidate"));
    }
    out
}

fn all_fixed(req: &InferRequest) -> bool {
    DESIGN_VARS.iter().all(|v| req.fixed.contains_key(*v))
}

async fn infer(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<InferResponse>, ApiError> {
    let req: InferRequest = serde_json::from_slice(&body).map_err(|e| {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed request body", vec![field("body", e.to_string())])
    })?;
    let model = state
        .models
        .get(&req.model)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown model `{}`", req.model), vec![field("model", "not loaded")]))?;
    if req.candidates > 1 && all_fixed(&req) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "every variable is fixed, so there is nothing to sample",
            vec![field("candidates", "must be 1 when all eight variables are fixed")],
        ));
    }
    let errors = field_errors(&req, model.manifest.variant);
    if !errors.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid request", errors));
    }
    let q = InverseQuery {
        fixed: req.fixed.clone(),
        target_strength: req.target_strength,
        num_candidates: req.candidates,
        seed: req.seed.unwrap_or(0),
    };
    let candidates = infer_partial(&model.imputer, &model.surrogate, &q).map_err(|e| match e {
        Error::Query { field: f, message } => ApiError::new(StatusCode::BAD_REQUEST, "invalid request", vec![field(f, message)]),
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string(), vec![]),
    })?;
    Ok(Json(InferResponse {
        candidates: candidates
            .iter()
            .map(|c| CandidateOut {
                design: c.design_map(),
                predicted_strength: c.predicted_strength,
                deviation: c.predicted_strength - req.target_strength,
            })
            .collect(),
        model: model.into(),
        bounds: bounds(&model.imputer.norm),
    }))
}

async fn models(State(state): State<Arc<AppState>>) -> Json<Vec<ModelInfo>> {
    Json(state.models.values().map(ModelInfo::from).collect())
}

#[derive(Debug, Deserialize)]
struct BoundsQuery {
    model: Option<String>,
}

async fn bounds_route(State(state): State<Arc<AppState>>, Query(q): Query<BoundsQuery>) -> Result<Json<Vec<VariableBounds>>, ApiError> {
    let model = match &q.model {
        Some(id) => Some(
            state
                .models
                .get(id)
                .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown model `{id}`"), vec![field("model", "not loaded")]))?,
        ),
        None => state.models.values().next(),
    };
    Ok(Json(model.map(|m| bounds(&m.imputer.norm)).unwrap_or_default()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub models: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        models: state.models.len(),
    })
}

pub fn router(state: Arc<AppState>, cors: bool) -> Router {
    let app = Router::new()
        .route("/api/infer", post(infer))
        .route("/api/models", get(models))
        .route("/api/bounds", get(bounds_route))
        .route("/api/health", get(health))
        .with_state(state);
    if cors {
        app.layer(tower_http::cors::CorsLayer::permissive())
    } else {
        app
    }
}

/// Serves until interrupted.
pub async fn serve(addr: SocketAddr, state: AppState, cors: bool) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving {} models on http://{}", state.models.len(), listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state), cors))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
