//! Thin clients for the gazeload service: the NDJSON stream socket and the
//! HTTP API.

use std::time::Duration;

use gazeload::session::GazeSample;
use gazeload::stream::{ModelInfo, OutboundRecord, PredictRequest, PredictResponse, SampleRecord};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, BufWriter};
use tokio::net::{TcpStream, ToSocketAddrs};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed server record: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server returned {status}: {body}")]
    Status { status: u16, body: String },
}

/// Pacing for a stream replay.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Pace {
    /// Send as fast as the socket accepts.
    #[default]
    Unpaced,
    /// Send at a fixed rate in samples per second.
    Rate(f64),
}

/// Replays samples over one stream connection and collects every record the
/// server sends back. Writing and reading run concurrently so a large replay
/// cannot deadlock on full socket buffers.
pub async fn replay<A: ToSocketAddrs>(addr: A, samples: &[GazeSample], pace: Pace) -> Result<Vec<OutboundRecord>, ClientError> {
    let lines: Vec<String> = samples
        .iter()
        .map(|s| serde_json::to_string(&SampleRecord::from(s)))
        .collect::<Result<_, _>>()?;
    replay_lines(addr, lines, pace).await
}

/// Like [`replay`] with pre-rendered lines (which need not be valid).
pub async fn replay_lines<A: ToSocketAddrs>(addr: A, lines: Vec<String>, pace: Pace) -> Result<Vec<OutboundRecord>, ClientError> {
    let socket = TcpStream::connect(addr).await?;
    socket.set_nodelay(true)?;
    let (r, w) = socket.into_split();

    let writer = tokio::spawn(async move {
        let mut w = BufWriter::new(w);
        let mut ticker = match pace {
            Pace::Rate(hz) if hz > 0.0 => {
                let mut t = tokio::time::interval(Duration::from_secs_f64(1.0 / hz));
                t.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Burst);
                Some(t)
            }
            _ => None,
        };
        for line in lines {
            if let Some(t) = ticker.as_mut() {
                t.tick().await;
            }
            w.write_all(line.as_bytes()).await?;
            w.write_all(b"\n").await?;
            if ticker.is_some() {
                w.flush().await?;
            }
        }
        w.flush().await?;
        w.shutdown().await
    });

    let mut out = Vec::new();
    let mut reader = BufReader::new(r).lines();
    while let Some(line) = reader.next_line().await? {
        out.push(serde_json::from_str(&line)?);
    }
    writer.await.map_err(std::io::Error::other)??;
    Ok(out)
}

/// Client for the HTTP API.
#[derive(Debug, Clone)]
pub struct HttpClient {
    base: String,
    http: reqwest::Client,
}

impl HttpClient {
    /// `base` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    async fn check(resp: reqwest::Response) -> Result<reqwest::Response, ClientError> {
        let status = resp.status();
        if status.is_success() {
            Ok(resp)
        } else {
            Err(ClientError::Status {
                status: status.as_u16(),
                body: resp.text().await.unwrap_or_default(),
            })
        }
    }

    pub async fn health(&self) -> Result<bool, ClientError> {
        let resp = Self::check(self.http.get(format!("{}/health", self.base)).send().await?).await?;
        let body: serde_json::Value = resp.json().await?;
        Ok(body["status"] == "ok")
    }

    pub async fn model(&self) -> Result<ModelInfo, ClientError> {
        let resp = Self::check(self.http.get(format!("{}/v1/model", self.base)).send().await?).await?;
        Ok(resp.json().await?)
    }

    pub async fn predict(&self, samples: &[GazeSample]) -> Result<PredictResponse, ClientError> {
        let body = PredictRequest {
            samples: samples.iter().map(SampleRecord::from).collect(),
        };
        let resp = self
            .http
            .post(format!("{}/v1/predict", self.base))
            .json(&body)
            .send()
            .await?;
        Ok(Self::check(resp).await?.json().await?)
    }
}
