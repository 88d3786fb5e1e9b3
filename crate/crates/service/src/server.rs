use std::collections::HashMap;
use std::future::IntoFuture;
use std::sync::{Arc, OnceLock};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use intentgate_core::pipeline::{respond, Decision, Pipeline};

use crate::config::{load_pipeline, ServiceConfig};
use crate::ring::DecisionRing;

/// Shared request state. The pipeline slot stays empty until loading finishes.
pub struct AppState {
    pipeline: OnceLock<Arc<Pipeline>>,
    ring: DecisionRing,
    fallback: String,
    allow_threshold_override: bool,
    expose_trace: bool,
}

impl AppState {
    pub fn new(config: &ServiceConfig) -> Self {
        Self {
            pipeline: OnceLock::new(),
            ring: DecisionRing::new(config.decision_ring_size),
            fallback: config.fallback_response.clone(),
            allow_threshold_override: config.allow_threshold_override,
            expose_trace: config.expose_trace,
        }
    }

    pub fn with_pipeline(config: &ServiceConfig, pipeline: Pipeline) -> Self {
        let state = Self::new(config);
        state.install(pipeline);
        state
    }

    /// Makes the pipeline available. Later calls are ignored.
    pub fn install(&self, pipeline: Pipeline) {
        let _ = self.pipeline.set(Arc::new(pipeline));
    }

    fn pipeline(&self) -> Result<Arc<Pipeline>, ApiError> {
        self.pipeline
            .get()
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model not loaded"))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifyRequest {
    text: String,
    #[serde(default)]
    threshold_override: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChatRequest {
    text: String,
}

#[derive(Debug, Serialize)]
struct ChatResponse<'a> {
    response: &'a str,
    decision_id: u64,
}

#[derive(Debug, Serialize)]
struct IntentEntry<'a> {
    id: &'a str,
    description: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a str>,
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

async fn run_classify(
    pipeline: Arc<Pipeline>,
    text: String,
    threshold: Option<f64>,
) -> Result<Decision, ApiError> {
    tokio::task::spawn_blocking(move || match threshold {
        Some(t) => pipeline.classify_at(&text, t),
        None => pipeline.classify(&text),
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

fn decision_json(decision: &Decision, expose_trace: bool) -> serde_json::Value {
    if expose_trace {
        serde_json::to_value(decision).expect("decision serializes")
    } else {
        json!({ "outcome": decision.outcome, "confidence": decision.confidence })
    }
}

async fn classify(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let request: ClassifyRequest = parse_body(&body)?;
    let pipeline = state.pipeline()?;
    if let Some(t) = request.threshold_override {
        if !state.allow_threshold_override {
            return Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "threshold_override is not permitted by this service",
            ));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(ApiError::bad_request(format!(
                "threshold_override {t} is outside [0, 1]"
            )));
        }
    }
    let decision = run_classify(pipeline, request.text, request.threshold_override).await?;
    Ok(Json(decision_json(&decision, state.expose_trace)).into_response())
}

async fn chat(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let request: ChatRequest = parse_body(&body)?;
    let pipeline = state.pipeline()?;
    let decision = run_classify(pipeline.clone(), request.text, None).await?;
    let response = respond(&decision, pipeline.registry(), &state.fallback)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .to_owned();
    let decision_id = state.ring.push(decision);
    Ok(Json(ChatResponse {
        response: &response,
        decision_id,
    })
    .into_response())
}

async fn decision(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    if !state.expose_trace {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "decision traces are not exposed",
        ));
    }
    let id: u64 = id
        .parse()
        .map_err(|_| ApiError::bad_request(format!("decision id `{id}` is not a number")))?;
    let decision = state
        .ring
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("decision {id} not found")))?;
    Ok(Json(decision_json(&decision, true)).into_response())
}

async fn intents(
    State(state): State<Arc<AppState>>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let mut include_responses = false;
    for (key, value) in &params {
        match key.as_str() {
            "include_responses" => {
                include_responses = match value.as_str() {
                    "true" | "1" => true,
                    "false" | "0" | "" => false,
                    other => {
                        return Err(ApiError::bad_request(format!(
                            "include_responses must be true or false, got `{other}`"
                        )))
                    }
                }
            }
            other => {
                return Err(ApiError::bad_request(format!(
                    "unknown query parameter `{other}`"
                )))
            }
        }
    }
    let pipeline = state.pipeline()?;
    let entries: Vec<IntentEntry<'_>> = pipeline
        .registry()
        .intents()
        .iter()
        .map(|i| IntentEntry {
            id: &i.id,
            description: &i.description,
            response: include_responses.then_some(i.response.as_str()),
        })
        .collect();
    Ok(Json(json!({ "intents": entries })).into_response())
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match state.pipeline.get() {
        Some(_) => Json(json!({ "status": "ready" })).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "status": "loading" })),
        )
            .into_response(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/classify", post(classify))
        .route("/chat", post(chat))
        .route("/decisions/{id}", get(decision))
        .route("/intents", get(intents))
        .route("/healthz", get(health))
        .with_state(state)
}

/// Binds the listener, then loads the model in the background; requests
/// arriving before it is ready get 503. Returns on ctrl-c or load failure.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    config.validate()?;
    let listener = TcpListener::bind(&config.listen)
        .await
        .with_context(|| format!("binding {}", config.listen))?;
    let addr = listener.local_addr()?;
    println!("listening on http://{addr}");
    tracing::info!(%addr, "listening");

    let state = Arc::new(AppState::new(&config));
    let loader_state = state.clone();
    let loader = tokio::task::spawn_blocking(move || -> anyhow::Result<()> {
        let pipeline = load_pipeline(&config)?;
        tracing::info!(intents = pipeline.registry().len(), "model loaded");
        loader_state.install(pipeline);
        Ok(())
    });
    let server = axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .into_future();
    tokio::pin!(server);
    tokio::select! {
        result = &mut server => result?,
        loaded = loader => {
            loaded??;
            server.await?;
        }
    }
    Ok(())
}
