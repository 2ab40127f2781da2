//! Websocket front end. The simulation runs on its own thread at the action
//! frequency; connections only touch the command slot and the snapshot
//! broadcast.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use furnibench::env::RunConfig;
use futures_util::{SinkExt, StreamExt};
use tokio::sync::broadcast;
use tower_http::services::ServeDir;

use crate::protocol::{decode_command, encode_server, encode_snapshot, Scene, ServerMessage};
use crate::session::{CommandSlot, TeleopSession};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub run: RunConfig,
    pub seed: u64,
    /// Where recordings are written.
    pub out_dir: PathBuf,
    /// Static files served at `/` when set.
    pub ui_dir: Option<PathBuf>,
    pub addr: SocketAddr,
}

struct Shared {
    slot: CommandSlot,
    snapshots: broadcast::Sender<String>,
    latest: Mutex<String>,
    scene: String,
}

pub struct TeleopServer {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim: thread::JoinHandle<furnibench::error::Result<Vec<PathBuf>>>,
    http: tokio::task::JoinHandle<()>,
}

/// Binds the listener and starts the simulation thread.
pub async fn start(opts: ServeOptions) -> anyhow::Result<TeleopServer> {
    let mut session = TeleopSession::new(opts.run.clone(), opts.seed, &opts.out_dir)?;
    let (tx, _) = broadcast::channel(64);
    let shared = Arc::new(Shared {
        slot: CommandSlot::default(),
        snapshots: tx,
        latest: Mutex::new(encode_snapshot(&session.snapshot())),
        scene: encode_server(&ServerMessage::Scene(Scene::describe(session.env()))),
    });
    let stop = Arc::new(AtomicBool::new(false));
    let period = Duration::from_secs_f64(1.0 / opts.run.controller.action_frequency);

    let sim = {
        let shared = shared.clone();
        let stop = stop.clone();
        thread::spawn(move || {
            let mut next = Instant::now() + period;
            while !stop.load(Ordering::Relaxed) {
                let now = Instant::now();
                if next > now {
                    thread::sleep(next - now);
                }
                next = (next + period).max(Instant::now());
                let text = match session.tick(shared.slot.take()) {
                    Ok(Some(snap)) => encode_snapshot(&snap),
                    Ok(None) => continue,
                    Err(e) => encode_server(&ServerMessage::Error { message: e.to_string() }),
                };
                if text.starts_with(r#"{"type":"snapshot""#) {
                    *shared.latest.lock().unwrap() = text.clone();
                }
                // no subscribers is fine
                let _ = shared.snapshots.send(text);
            }
            session.close()?;
            Ok(session.written().to_vec())
        })
    };

    let mut app = Router::new().route("/teleop", get(upgrade)).with_state(shared);
    if let Some(dir) = &opts.ui_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let listener = tokio::net::TcpListener::bind(opts.addr).await?;
    let addr = listener.local_addr()?;
    let http = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            eprintln!("teleop server stopped: {e}");
        }
    });
    Ok(TeleopServer { addr, stop, sim, http })
}

impl TeleopServer {
    /// Stops the simulation, flushes any open recording and returns the
    /// episode files written during the session.
    pub async fn shutdown(self) -> anyhow::Result<Vec<PathBuf>> {
        self.stop.store(true, Ordering::Relaxed);
        self.http.abort();
        let sim = self.sim;
        let written = tokio::task::spawn_blocking(move || sim.join())
            .await?
            .map_err(|_| anyhow::anyhow!("simulation thread panicked"))??;
        Ok(written)
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, shared))
}

async fn connection(socket: WebSocket, shared: Arc<Shared>) {
    let (mut sink, mut stream) = socket.split();
    let mut rx = shared.snapshots.subscribe();
    let latest = shared.latest.lock().unwrap().clone();
    for text in [shared.scene.clone(), latest] {
        if sink.send(Message::Text(text.into())).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            incoming = stream.next() => {
                let reply = match incoming {
                    Some(Ok(Message::Text(t))) => match decode_command(t.as_str()) {
                        Ok(cmd) => {
                            shared.slot.submit(cmd);
                            None
                        }
                        Err(e) => Some(e.to_string()),
                    },
                    Some(Ok(Message::Binary(_))) => Some("binary frames are not supported".to_string()),
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                    Some(Ok(_)) => None,
                };
                if let Some(message) = reply {
                    let text = encode_server(&ServerMessage::Error { message });
                    if sink.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
            }
            out = rx.recv() => match out {
                Ok(text) => {
                    if sink.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
}
