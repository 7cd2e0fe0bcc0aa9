use std::future::pending;
use std::net::SocketAddr;
use std::sync::Arc;

use gazeload::dataset::{InputMode, WindowConfig};
use gazeload::mlp::{MlpConfig, MlpModel, RunLengthPredictor};
use gazeload::session::GazeSample;
use gazeload::stream::{LoadedModel, OutboundRecord, SampleRecord, StreamConfig};
use gazeload::synth::{generate_cohort, CohortConfig};
use gazeload_client::{replay, replay_lines, HttpClient, Pace};
use gazeload_service::{handle_connection, serve_http, serve_stream, AppState, ServiceError};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpListener;

fn stream_config() -> StreamConfig {
    StreamConfig {
        window: WindowConfig {
            window_len: 200,
            stride: 50,
            input_mode: InputMode::Summary,
        },
        ..StreamConfig::default()
    }
}

fn app() -> Arc<AppState> {
    let cfg = MlpConfig {
        hidden_sizes: vec![6],
        seed: 9,
        ..MlpConfig::default()
    };
    let model = MlpModel::init(&cfg, 8).unwrap();
    AppState::new(LoadedModel::Mlp(RunLengthPredictor::new(model)), stream_config()).unwrap()
}

fn sessions() -> (Vec<GazeSample>, Vec<GazeSample>) {
    let mut s = generate_cohort(&CohortConfig {
        n_low: 1,
        n_high: 1,
        duration_s: 6.0,
        seed: 21,
        ..CohortConfig::default()
    })
    .unwrap();
    let b = s.pop().unwrap().into_parts().1;
    let a = s.pop().unwrap().into_parts().1;
    (a, b)
}

async fn start_stream(app: Arc<AppState>) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve_stream(listener, app, pending()));
    addr
}

fn strip(records: &[OutboundRecord]) -> Vec<(i64, u64, u8)> {
    records
        .iter()
        .map(|r| match r {
            OutboundRecord::Prediction(p) => (p.t_end, p.p_high.to_bits(), p.label),
            OutboundRecord::Error(e) => panic!("unexpected error record {e:?}"),
        })
        .collect()
}

fn lines(samples: &[GazeSample]) -> Vec<String> {
    samples.iter().map(|s| serde_json::to_string(&SampleRecord::from(s)).unwrap()).collect()
}

#[tokio::test]
async fn concurrent_connections_match_isolated_runs() {
    let addr = start_stream(app()).await;
    let (a, b) = sessions();
    let iso_a = replay(addr, &a, Pace::Unpaced).await.unwrap();
    let iso_b = replay(addr, &b, Pace::Unpaced).await.unwrap();
    assert_eq!(iso_a.len(), stream_config().window.window_count(a.len()));

    let (con_a, con_b) = tokio::join!(replay(addr, &a, Pace::Unpaced), replay(addr, &b, Pace::Unpaced));
    assert_eq!(strip(&con_a.unwrap()), strip(&iso_a));
    assert_eq!(strip(&con_b.unwrap()), strip(&iso_b));
}

#[tokio::test]
async fn empty_connection_produces_nothing() {
    let addr = start_stream(app()).await;
    assert!(replay(addr, &[], Pace::Unpaced).await.unwrap().is_empty());
}

#[tokio::test]
async fn bad_lines_are_reported_and_skipped() {
    let addr = start_stream(app()).await;
    let (a, _) = sessions();
    let clean = replay(addr, &a, Pace::Unpaced).await.unwrap();

    let mut input = lines(&a);
    input.insert(10, "{\"t\": 1".into());
    input.insert(20, String::new());
    input.insert(30, input[5].clone());
    let out = replay_lines(addr, input, Pace::Unpaced).await.unwrap();
    let errors: Vec<u64> = out
        .iter()
        .filter_map(|r| match r {
            OutboundRecord::Error(e) => Some(e.line),
            _ => None,
        })
        .collect();
    assert_eq!(errors, [11, 31]);
    let predictions: Vec<OutboundRecord> = out.into_iter().filter(|r| matches!(r, OutboundRecord::Prediction(_))).collect();
    assert_eq!(strip(&predictions), strip(&clean));
}

#[tokio::test]
async fn invalid_utf8_ends_the_session_with_an_error() {
    let app = app();
    let input: &[u8] = b"{\"t\":0}\n\xff\xfe\n";
    let (mut client, server) = tokio::io::duplex(4096);
    let summary = handle_connection(&app, input, server).await.unwrap();
    assert_eq!(summary.errors, 2);
    let mut out = String::new();
    client.read_to_string(&mut out).await.unwrap();
    let records: Vec<OutboundRecord> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert!(matches!(&records[1], OutboundRecord::Error(e) if e.line == 2));
}

#[tokio::test]
async fn http_predict_matches_the_stream_socket() {
    let app = app();
    let stream_addr = start_stream(app.clone()).await;
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let http_addr = listener.local_addr().unwrap();
    tokio::spawn(serve_http(listener, app, pending()));
    let client = HttpClient::new(format!("http://{http_addr}/"));

    assert!(client.health().await.unwrap());
    let info = client.model().await.unwrap();
    assert_eq!((info.kind.as_str(), info.input_dim), ("mlp", 8));
    assert_eq!(info.stream, stream_config());

    let (a, _) = sessions();
    let resp = client.predict(&a).await.unwrap();
    assert!(resp.errors.is_empty());
    let via_http: Vec<OutboundRecord> = resp.predictions.iter().copied().map(OutboundRecord::Prediction).collect();
    let via_socket = replay(stream_addr, &a, Pace::Unpaced).await.unwrap();
    assert_eq!(strip(&via_http), strip(&via_socket));

    let mut shuffled = a[..300].to_vec();
    shuffled.swap(100, 101);
    let resp = client.predict(&shuffled).await.unwrap();
    assert_eq!(resp.errors.len(), 1);
    assert_eq!(resp.errors[0].line, 102);
}

#[tokio::test]
async fn malformed_http_body_is_rejected() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve_http(listener, app(), pending()));
    let resp = raw_post(addr, "{\"samples\": [{\"t\": 0}]}").await;
    assert!(resp.starts_with("HTTP/1.1 422"), "{resp}");
}

/// Minimal HTTP/1.1 POST over a raw socket.
async fn raw_post(addr: SocketAddr, body: &str) -> String {
    let mut s = tokio::net::TcpStream::connect(addr).await.unwrap();
    let req = format!(
        "POST /v1/predict HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    s.write_all(req.as_bytes()).await.unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).await.unwrap();
    out
}

#[test]
fn model_and_stream_config_must_agree() {
    let model = MlpModel::init(&MlpConfig::default(), 5).unwrap();
    let err = AppState::new(LoadedModel::Mlp(RunLengthPredictor::new(model)), stream_config()).unwrap_err();
    assert!(matches!(err, ServiceError::Incompatible { model: 5, stream: 8 }));

    let mut bad = stream_config();
    bad.window.stride = 0;
    let model = MlpModel::init(&MlpConfig::default(), 8).unwrap();
    assert!(AppState::new(LoadedModel::Mlp(RunLengthPredictor::new(model)), bad).is_err());
}
