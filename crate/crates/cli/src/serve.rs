//! Minimal JSON-over-HTTP predictor: `GET /health` and `POST /predict`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::predict::Predictor;

/// Shared server state; the predictor is absent until loading finishes.
#[derive(Default)]
pub struct AppState {
    predictor: RwLock<Option<Arc<Predictor>>>,
}

impl AppState {
    pub fn loading() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn ready(p: Predictor) -> Arc<Self> {
        let s = Self::default();
        s.set(p);
        Arc::new(s)
    }

    pub fn set(&self, p: Predictor) {
        *self.predictor.write().expect("state lock poisoned") = Some(Arc::new(p));
    }

    fn get(&self) -> Option<Arc<Predictor>> {
        self.predictor.read().expect("state lock poisoned").clone()
    }
}

#[derive(Deserialize)]
struct PredictRequest {
    text: String,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

fn loading() -> Response {
    (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response()
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match state.get() {
        Some(p) => Json(json!({ "status": "ok", "model_name": p.model_name() })).into_response(),
        None => loading(),
    }
}

async fn predict(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(p) = state.get() else {
        return loading();
    };
    let req: PredictRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("expected a JSON object with a \"text\" string: {e}")),
    };
    match p.predict(&req.text) {
        Ok(out) => Json(out).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}")),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/predict", post(predict))
        .with_state(state)
}

/// Binds first, then loads the model in the background so early requests
/// see 503 instead of a refused connection.
pub async fn serve(model: PathBuf, addr: SocketAddr) -> Result<()> {
    let state = AppState::loading();
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("cannot bind {addr}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    let loader = state.clone();
    let load = tokio::task::spawn_blocking(move || -> Result<()> {
        loader.set(Predictor::load(&model)?);
        eprintln!("model loaded from {}", model.display());
        Ok(())
    });
    let server = tokio::spawn(async move { axum::serve(listener, router(state)).await });
    load.await.context("loader panicked")??;
    server.await.context("server panicked")?.context("server failed")
}
