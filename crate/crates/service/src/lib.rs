//! Streaming cognitive-load inference service.
//!
//! Two transports share one loaded model:
//!
//! * a raw stream socket (or stdin/stdout in pipe mode) speaking
//!   newline-delimited JSON, one independent [`StreamState`] per connection;
//! * an HTTP API: `GET /health`, `GET /v1/model` and `POST /v1/predict`.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use gazeload::stream::{
    handle_line, predict_batch, ErrorRecord, LoadedModel, ModelInfo, OutboundRecord, PredictRequest, PredictResponse,
    StreamConfig, StreamError, StreamState,
};
use serde::Serialize;
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncWrite, AsyncWriteExt, BufReader, BufWriter};
use tokio::net::{TcpListener, TcpStream};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("model takes {model} inputs but the stream config produces {stream}")]
    Incompatible { model: usize, stream: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Immutable state shared by every connection.
#[derive(Debug)]
pub struct AppState {
    model: LoadedModel,
    stream: StreamConfig,
}

impl AppState {
    pub fn new(model: LoadedModel, stream: StreamConfig) -> Result<Arc<Self>, ServiceError> {
        stream.validate()?;
        if model.input_dim() != stream.window.width() {
            return Err(ServiceError::Incompatible {
                model: model.input_dim(),
                stream: stream.window.width(),
            });
        }
        Ok(Arc::new(Self { model, stream }))
    }

    pub fn model(&self) -> &LoadedModel {
        &self.model
    }

    pub fn stream_config(&self) -> &StreamConfig {
        &self.stream
    }

    pub fn info(&self) -> ModelInfo {
        ModelInfo {
            kind: self.model.kind().to_string(),
            input_dim: self.model.input_dim(),
            stream: self.stream.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConnectionSummary {
    pub lines: u64,
    pub predictions: u64,
    pub errors: u64,
}

async fn write_record<W: AsyncWrite + Unpin>(w: &mut W, rec: &impl Serialize) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(rec).map_err(std::io::Error::other)?;
    line.push(b'\n');
    w.write_all(&line).await?;
    w.flush().await
}

/// Runs one NDJSON session until the reader hits end of stream.
pub async fn handle_connection<R, W>(app: &AppState, reader: R, writer: W) -> Result<ConnectionSummary, ServiceError>
where
    R: AsyncRead + Unpin,
    W: AsyncWrite + Unpin,
{
    let mut state = StreamState::new(app.stream.clone())?;
    let mut lines = BufReader::new(reader).lines();
    let mut out = BufWriter::new(writer);
    let mut summary = ConnectionSummary::default();
    loop {
        let line = match lines.next_line().await {
            Ok(Some(line)) => line,
            Ok(None) => break,
            Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                // Not UTF-8; the framing cannot be trusted past this point.
                summary.errors += 1;
                let rec = ErrorRecord {
                    error: format!("unreadable input: {e}"),
                    line: summary.lines + 1,
                };
                write_record(&mut out, &rec).await?;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        summary.lines += 1;
        match handle_line(&mut state, &app.model, &line, summary.lines) {
            Some(rec @ OutboundRecord::Prediction(_)) => {
                summary.predictions += 1;
                write_record(&mut out, &rec).await?;
            }
            Some(rec @ OutboundRecord::Error(_)) => {
                summary.errors += 1;
                tracing::debug!(line = summary.lines, "rejected input line");
                write_record(&mut out, &rec).await?;
            }
            None => {}
        }
    }
    out.shutdown().await?;
    Ok(summary)
}

async fn serve_socket(app: Arc<AppState>, socket: TcpStream, peer: SocketAddr) {
    let (r, w) = socket.into_split();
    match handle_connection(&app, r, w).await {
        Ok(s) => tracing::info!(%peer, lines = s.lines, predictions = s.predictions, errors = s.errors, "connection closed"),
        Err(e) => tracing::warn!(%peer, error = %e, "connection failed"),
    }
}

/// Accepts stream connections until `shutdown` resolves.
pub async fn serve_stream(listener: TcpListener, app: Arc<AppState>, shutdown: impl Future<Output = ()>) -> std::io::Result<()> {
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            _ = &mut shutdown => return Ok(()),
            accepted = listener.accept() => {
                let (socket, peer) = accepted?;
                tokio::spawn(serve_socket(app.clone(), socket, peer));
            }
        }
    }
}

/// Pipe mode: one session over stdin/stdout.
pub async fn serve_pipe(app: Arc<AppState>) -> Result<ConnectionSummary, ServiceError> {
    handle_connection(&app, tokio::io::stdin(), tokio::io::stdout()).await
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn model_info(State(app): State<Arc<AppState>>) -> Json<ModelInfo> {
    Json(app.info())
}

async fn predict(
    State(app): State<Arc<AppState>>,
    Json(req): Json<PredictRequest>,
) -> Result<Json<PredictResponse>, (StatusCode, String)> {
    let job = tokio::task::spawn_blocking(move || predict_batch(&app.stream, &app.model, &req.samples));
    match job.await {
        Ok(Ok(resp)) => Ok(Json(resp)),
        Ok(Err(e)) => Err((StatusCode::UNPROCESSABLE_ENTITY, e.to_string())),
        Err(e) => Err((StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/model", get(model_info))
        .route("/v1/predict", post(predict))
        .with_state(app)
}

/// Serves the HTTP API until `shutdown` resolves.
pub async fn serve_http(listener: TcpListener, app: Arc<AppState>, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(app)).with_graceful_shutdown(shutdown).await
}
