use std::future::pending;
use std::net::SocketAddr;
use std::time::Instant;

use gazeload::dataset::{InputMode, WindowConfig};
use gazeload::forest::{ForestConfig, ForestModel, Node, Tree};
use gazeload::session::GazeSample;
use gazeload::stream::{LoadedModel, OutboundRecord, StreamConfig};
use gazeload_client::{replay, ClientError, HttpClient, Pace};
use gazeload_service::{serve_http, serve_stream, AppState};
use tokio::net::TcpListener;

/// Single-leaf forest that votes high on every window.
fn constant_forest(width: usize) -> LoadedModel {
    LoadedModel::Forest(ForestModel {
        width,
        trees: vec![Tree {
            nodes: vec![Node {
                feature: u32::MAX,
                threshold: 0.0,
                left: u32::MAX,
                right: u32::MAX,
                p_high: 0.75,
                samples: 1,
                depth: 0,
            }],
        }],
        config: ForestConfig::default(),
        cv_scores: Vec::new(),
    })
}

fn stream_config() -> StreamConfig {
    StreamConfig {
        window: WindowConfig {
            window_len: 20,
            stride: 10,
            input_mode: InputMode::Summary,
        },
        ..StreamConfig::default()
    }
}

fn samples(n: usize) -> Vec<GazeSample> {
    (0..n)
        .map(|i| GazeSample::binocular(i as i64 * 5000, [0.0, 0.0, 1.0], 3.0 + (i % 7) as f64 * 0.01))
        .collect()
}

async fn start() -> (SocketAddr, SocketAddr) {
    let app = AppState::new(constant_forest(8), stream_config()).unwrap();
    let stream = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let http = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addrs = (stream.local_addr().unwrap(), http.local_addr().unwrap());
    tokio::spawn(serve_stream(stream, app.clone(), pending()));
    tokio::spawn(serve_http(http, app, pending()));
    addrs
}

#[tokio::test]
async fn paced_replay_takes_its_time_and_matches_unpaced() {
    let (addr, _) = start().await;
    let s = samples(60);
    let fast = replay(addr, &s, Pace::Unpaced).await.unwrap();
    let started = Instant::now();
    let slow = replay(addr, &s, Pace::Rate(400.0)).await.unwrap();
    assert!(started.elapsed().as_secs_f64() >= 59.0 / 400.0);
    assert_eq!(fast.len(), 5);
    let ends = |r: &[OutboundRecord]| -> Vec<i64> {
        r.iter()
            .map(|r| match r {
                OutboundRecord::Prediction(p) => p.t_end,
                OutboundRecord::Error(e) => panic!("{e:?}"),
            })
            .collect()
    };
    assert_eq!(ends(&fast), ends(&slow));
    assert!(fast.iter().all(|r| matches!(r, OutboundRecord::Prediction(p) if p.p_high == 1.0 && p.label == 1)));
}

#[tokio::test]
async fn unreachable_service_is_an_io_error() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    assert!(matches!(replay(addr, &samples(3), Pace::Unpaced).await, Err(ClientError::Io(_))));
    let http = HttpClient::new(format!("http://{addr}"));
    assert!(matches!(http.health().await, Err(ClientError::Http(_))));
}

#[tokio::test]
async fn http_client_round_trip() {
    let (_, http) = start().await;
    let client = HttpClient::new(format!("http://{http}"));
    assert!(client.health().await.unwrap());
    let info = client.model().await.unwrap();
    assert_eq!(info.kind, "forest");
    assert_eq!(info.input_dim, 8);
    let resp = client.predict(&samples(45)).await.unwrap();
    let ends: Vec<i64> = resp.predictions.iter().map(|p| p.t_end).collect();
    assert_eq!(ends, [95_000, 145_000, 195_000]);

    let missing = HttpClient::new(format!("http://{http}/nope"));
    assert!(matches!(missing.health().await, Err(ClientError::Status { status: 404, .. })));
}
