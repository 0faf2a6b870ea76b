//! Session loop task plus the axum front end.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use log::{debug, info};
use poolmap_core::scenario::Scenario;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;
use tower_http::services::ServeDir;

use crate::protocol::{ClientMessage, CommandEcho, ServerMessage, Snapshot, PROTOCOL_VERSION};
use crate::session::Session;

pub const DEFAULT_PORT: u16 = 8844;
pub const SNAPSHOT_HZ: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server failed: {0}")]
    Runtime(#[from] std::io::Error),
}

/// Messages from client tasks to the session loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control {
    Command(CommandEcho),
    Reset,
    Joined,
    Left,
}

#[derive(Debug, Clone)]
pub struct SessionHandle {
    control: mpsc::UnboundedSender<Control>,
    snapshots: broadcast::Sender<Arc<Snapshot>>,
    scenario: Arc<Scenario>,
}

impl SessionHandle {
    pub fn send(&self, c: Control) -> bool {
        self.control.send(c).is_ok()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<Snapshot>> {
        self.snapshots.subscribe()
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }
}

/// Starts the session loop on the current runtime. Ticks follow fixed
/// deadlines, so simulated time tracks wall time without accumulating drift.
pub fn spawn_session(scenario: Scenario) -> (SessionHandle, JoinHandle<()>) {
    let (control, rx) = mpsc::unbounded_channel();
    let (snapshots, _) = broadcast::channel(64);
    let handle = SessionHandle {
        control,
        snapshots: snapshots.clone(),
        scenario: Arc::new(scenario.clone()),
    };
    let task = tokio::spawn(run_session(Session::new(scenario), rx, snapshots));
    (handle, task)
}

async fn run_session(
    mut session: Session,
    mut rx: mpsc::UnboundedReceiver<Control>,
    tx: broadcast::Sender<Arc<Snapshot>>,
) {
    let period = Duration::from_secs_f64(session.tick_period_s());
    let snapshot_every = ((1.0 / session.tick_period_s()) / SNAPSHOT_HZ).round().max(1.0) as u64;
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let mut clients = 0usize;
    let mut ticks = 0u64;
    loop {
        interval.tick().await;
        loop {
            match rx.try_recv() {
                Ok(Control::Command(c)) => session.set_command(c.surge, c.sway, c.heave, c.yaw_rate),
                Ok(Control::Reset) => {
                    info!("session reset");
                    session.reset();
                    ticks = 0;
                }
                Ok(Control::Joined) => clients += 1,
                Ok(Control::Left) => {
                    clients = clients.saturating_sub(1);
                    if clients == 0 {
                        session.set_command(0.0, 0.0, 0.0, 0.0);
                    }
                }
                Err(mpsc::error::TryRecvError::Empty) => break,
                Err(mpsc::error::TryRecvError::Disconnected) => return,
            }
        }
        session.tick();
        ticks += 1;
        if ticks.is_multiple_of(snapshot_every) {
            // no receivers is not an error: the session keeps running
            let _ = tx.send(Arc::new(session.snapshot()));
        }
    }
}

async fn client(socket: WebSocket, handle: SessionHandle) {
    let (mut sink, mut stream) = socket.split();
    let mut snapshots = handle.subscribe();
    handle.send(Control::Joined);
    let hello = ServerMessage::Hello {
        v: PROTOCOL_VERSION,
        scenario: handle.scenario(),
    };
    let mut open = sink.send(Message::Text(hello.to_json().into())).await.is_ok();
    let mut show_truth = true;
    while open {
        let reply = tokio::select! {
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => match ClientMessage::parse(&text) {
                    Ok(ClientMessage::Cmd { surge, sway, heave, yaw_rate }) => {
                        handle.send(Control::Command(CommandEcho { surge, sway, heave, yaw_rate }));
                        None
                    }
                    Ok(ClientMessage::Reset) => {
                        handle.send(Control::Reset);
                        None
                    }
                    Ok(ClientMessage::Config { show_truth: s }) => {
                        show_truth = s;
                        None
                    }
                    Err(msg) => Some(ServerMessage::Error { msg }.to_json()),
                },
                Some(Ok(Message::Binary(_))) => Some(
                    ServerMessage::Error { msg: "binary frames are not supported".into() }.to_json(),
                ),
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => None,
            },
            snap = snapshots.recv() => match snap {
                Ok(s) if show_truth => Some(ServerMessage::Snapshot(&s).to_json()),
                Ok(s) => Some(ServerMessage::Snapshot(&s.without_truth()).to_json()),
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    debug!("client lagged by {n} snapshots");
                    None
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
        };
        if let Some(text) = reply {
            open = sink.send(Message::Text(text.into())).await.is_ok();
        }
    }
    handle.send(Control::Left);
}

async fn ws_route(ws: WebSocketUpgrade, State(handle): State<SessionHandle>) -> Response {
    ws.on_upgrade(move |socket| client(socket, handle))
}

async fn placeholder_index() -> impl IntoResponse {
    Html("<!doctype html><title>poolmap</title><p>UI bundle not installed; connect a client to <code>/ws</code>.</p>")
}

pub fn router(handle: SessionHandle, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/ws", get(ws_route))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(handle);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder_index)),
    }
}

#[derive(Debug)]
pub struct RunningServer {
    pub addr: SocketAddr,
    pub handle: SessionHandle,
    pub server: JoinHandle<Result<(), std::io::Error>>,
    pub session: JoinHandle<()>,
}

/// Binds and starts serving in the background.
pub async fn start(scenario: Scenario, addr: SocketAddr, static_dir: Option<PathBuf>) -> Result<RunningServer, ServeError> {
    let listener = TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })?;
    let local = listener.local_addr()?;
    let (handle, session) = spawn_session(scenario);
    let app = router(handle.clone(), static_dir);
    let server = tokio::spawn(async move { axum::serve(listener, app).await });
    info!("serving on http://{local}");
    Ok(RunningServer {
        addr: local,
        handle,
        server,
        session,
    })
}

/// Serves until the process is stopped.
pub async fn serve(scenario: Scenario, addr: SocketAddr, static_dir: Option<PathBuf>) -> Result<(), ServeError> {
    let running = start(scenario, addr, static_dir).await?;
    match running.server.await {
        Ok(result) => result.map_err(ServeError::Runtime),
        Err(e) => Err(ServeError::Runtime(std::io::Error::other(e))),
    }
}
