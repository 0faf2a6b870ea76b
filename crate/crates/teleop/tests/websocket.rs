use std::net::SocketAddr;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use poolmap_core::scenario::Scenario;
use poolmap_teleop::start;
use serde_json::Value;
use tokio::net::TcpStream;
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn server() -> SocketAddr {
    let running = start(Scenario::pool(), "127.0.0.1:0".parse().unwrap(), None).await.unwrap();
    running.addr
}

async fn connect(addr: SocketAddr) -> Ws {
    let (ws, _) = connect_async(format!("ws://{addr}/ws")).await.unwrap();
    ws
}

async fn next_json(ws: &mut Ws) -> Value {
    loop {
        let msg = timeout(Duration::from_secs(5), ws.next()).await.expect("frame within 5 s").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn next_of_type(ws: &mut Ws, kind: &str) -> Value {
    loop {
        let v = next_json(ws).await;
        if v["type"] == kind {
            return v;
        }
    }
}

async fn send(ws: &mut Ws, text: &str) {
    ws.send(Message::Text(text.into())).await.unwrap();
}

#[tokio::test]
async fn hello_then_snapshots() {
    let addr = server().await;
    let mut ws = connect(addr).await;
    let hello = next_json(&mut ws).await;
    assert_eq!(hello["type"], "hello");
    assert_eq!(hello["v"], 1);
    assert_eq!(hello["scenario"]["pool_length_m"], 5.5);

    let a = next_of_type(&mut ws, "snapshot").await;
    let b = next_of_type(&mut ws, "snapshot").await;
    let dt = b["t"].as_f64().unwrap() - a["t"].as_f64().unwrap();
    assert!((dt - 0.1).abs() < 1e-9, "snapshot spacing {dt}");
    assert_eq!(a["estimate"].as_array().unwrap().len(), 15);
    assert_eq!(a["cov_diag"].as_array().unwrap().len(), 15);
}

#[tokio::test]
async fn healthz_and_index() {
    let addr = server().await;
    let mut stream = TcpStream::connect(addr).await.unwrap();
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    stream
        .write_all(b"GET /healthz HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut body = String::new();
    stream.read_to_string(&mut body).await.unwrap();
    assert!(body.starts_with("HTTP/1.1 200"));
    assert!(body.ends_with("ok"));
}

#[tokio::test]
async fn surge_moves_truth_forward() {
    let addr = server().await;
    let mut ws = connect(addr).await;
    let before = next_of_type(&mut ws, "snapshot").await;
    let x0 = before["truth"][0].as_f64().unwrap();
    send(&mut ws, r#"{"type":"cmd","surge":0.4,"sway":0,"heave":0,"yaw_rate":0}"#).await;
    let mut advanced = false;
    for _ in 0..5 {
        let s = next_of_type(&mut ws, "snapshot").await;
        if s["command"]["surge"] == 0.4 {
            advanced = s["truth"][0].as_f64().unwrap() > x0;
            break;
        }
    }
    assert!(advanced);
}

#[tokio::test]
async fn malformed_message_gets_error_frame_and_session_survives() {
    let addr = server().await;
    let mut bad = connect(addr).await;
    let mut good = connect(addr).await;
    next_of_type(&mut bad, "hello").await;
    send(&mut bad, "{not json").await;
    let err = next_of_type(&mut bad, "error").await;
    assert!(!err["msg"].as_str().unwrap().is_empty());
    send(&mut bad, r#"{"type":"teleport"}"#).await;
    next_of_type(&mut bad, "error").await;

    // the other client never sees the error and keeps getting snapshots
    for _ in 0..5 {
        let v = next_json(&mut good).await;
        assert_ne!(v["type"], "error");
    }
    next_of_type(&mut bad, "snapshot").await;
}

#[tokio::test]
async fn two_clients_see_the_same_sequence() {
    let addr = server().await;
    let mut a = connect(addr).await;
    let mut b = connect(addr).await;
    next_of_type(&mut a, "hello").await;
    next_of_type(&mut b, "hello").await;
    // align on a snapshot both have seen
    let first_b = next_of_type(&mut b, "snapshot").await;
    let mut first_a = next_of_type(&mut a, "snapshot").await;
    while first_a["t"].as_f64() < first_b["t"].as_f64() {
        first_a = next_of_type(&mut a, "snapshot").await;
    }
    assert_eq!(first_a, first_b);
    for _ in 0..5 {
        assert_eq!(next_of_type(&mut a, "snapshot").await, next_of_type(&mut b, "snapshot").await);
    }
}

#[tokio::test]
async fn truth_hidden_per_client() {
    let addr = server().await;
    let mut hidden = connect(addr).await;
    let mut shown = connect(addr).await;
    send(&mut hidden, r#"{"type":"config","show_truth":false}"#).await;
    next_of_type(&mut hidden, "snapshot").await;
    let s = next_of_type(&mut hidden, "snapshot").await;
    assert!(s.get("truth").is_none());
    assert!(next_of_type(&mut shown, "snapshot").await.get("truth").is_some());
}

#[tokio::test]
async fn reset_restarts_the_clock() {
    let addr = server().await;
    let mut ws = connect(addr).await;
    let mut s = next_of_type(&mut ws, "snapshot").await;
    while s["t"].as_f64().unwrap() < 0.5 {
        s = next_of_type(&mut ws, "snapshot").await;
    }
    send(&mut ws, r#"{"type":"reset"}"#).await;
    let mut restarted = false;
    for _ in 0..10 {
        if next_of_type(&mut ws, "snapshot").await["t"].as_f64().unwrap() < 0.3 {
            restarted = true;
            break;
        }
    }
    assert!(restarted);
}

#[tokio::test]
async fn leaving_zeroes_command_and_session_stays_joinable() {
    let addr = server().await;
    let mut ws = connect(addr).await;
    send(&mut ws, r#"{"type":"cmd","surge":0.3}"#).await;
    loop {
        if next_of_type(&mut ws, "snapshot").await["command"]["surge"] == 0.3 {
            break;
        }
    }
    ws.close(None).await.unwrap();
    drop(ws);
    tokio::time::sleep(Duration::from_millis(300)).await;

    let mut again = connect(addr).await;
    assert_eq!(next_of_type(&mut again, "hello").await["v"], 1);
    let s = next_of_type(&mut again, "snapshot").await;
    assert_eq!(s["command"]["surge"], 0.0);
}

#[tokio::test]
async fn bind_conflict_is_reported() {
    let addr = server().await;
    let err = start(Scenario::pool(), addr, None).await.unwrap_err();
    assert!(err.to_string().contains("cannot bind"));
}

#[tokio::test]
async fn wall_clock_pacing() {
    let addr = server().await;
    let mut ws = connect(addr).await;
    let first = next_of_type(&mut ws, "snapshot").await["t"].as_f64().unwrap();
    let started = std::time::Instant::now();
    let mut last = first;
    while started.elapsed() < Duration::from_secs(3) {
        last = next_of_type(&mut ws, "snapshot").await["t"].as_f64().unwrap();
    }
    let sim = last - first;
    let wall = started.elapsed().as_secs_f64();
    // one snapshot period of quantization on each end
    assert!((sim - wall).abs() <= 0.01 * wall + 0.2, "sim {sim} wall {wall}");
}
