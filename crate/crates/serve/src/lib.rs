//! Interactive render service.
//!
//! `GET /render` upgrades to a WebSocket session (see [`protocol`] for the
//! message layout); `GET /health` reports status and the loaded checkpoint's
//! hash. Sessions use latest-wins scheduling: while a frame renders, only the
//! newest incoming pose is kept, and every pose it displaces is answered with
//! a superseded notice.

pub mod protocol;

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, Notify};

use nerdf_core::nerdf::RayModel;

pub use protocol::{
    decode_frame, encode_frame, parse_pose, render_pose, FrameHeader, Limits, Notice, PoseMessage, PROTOCOL_VERSION,
};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

/// Read-only state shared by every session.
pub struct ServiceState {
    pub model: RayModel<f32>,
    pub checkpoint_hash: String,
    pub limits: Limits,
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/render", get(upgrade))
        .route("/health", get(health))
        .with_state(state)
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })
}

/// Serves until the process is stopped.
pub async fn run(listener: TcpListener, state: Arc<ServiceState>) -> Result<(), ServeError> {
    axum::serve(listener, router(state)).await?;
    Ok(())
}

async fn health(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "v": PROTOCOL_VERSION,
        "status": "ok",
        "checkpoint_hash": state.checkpoint_hash,
        "max_width": state.limits.max_width,
        "max_height": state.limits.max_height,
    }))
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<ServiceState>>) -> Response {
    ws.on_upgrade(move |socket| session(socket, state))
}

/// The one pose waiting to be rendered, if any.
type Pending = Arc<Mutex<Option<PoseMessage>>>;

async fn session(socket: WebSocket, state: Arc<ServiceState>) {
    let (mut sink, mut stream) = socket.split();
    let (out_tx, mut out_rx) = mpsc::channel::<Message>(8);
    let writer = tokio::spawn(async move {
        while let Some(msg) = out_rx.recv().await {
            if sink.send(msg).await.is_err() {
                break;
            }
        }
    });

    let pending: Pending = Arc::default();
    let wake = Arc::new(Notify::new());
    let renderer = tokio::spawn(render_loop(state.clone(), pending.clone(), wake.clone(), out_tx.clone()));

    while let Some(Ok(msg)) = stream.next().await {
        let reply = match msg {
            Message::Text(text) => match parse_pose(text.as_str(), &state.limits) {
                Ok(pose) => {
                    let displaced = pending.lock().expect("pending lock").replace(pose);
                    wake.notify_one();
                    displaced.map(|old| Notice::superseded(old.id))
                }
                Err(notice) => Some(notice),
            },
            Message::Binary(_) => Some(Notice::error(None, None, "pose messages must be JSON text frames")),
            Message::Close(_) => break,
            _ => None,
        };
        if let Some(notice) = reply {
            if out_tx.send(Message::Text(notice.to_json().into())).await.is_err() {
                break;
            }
        }
    }
    // a render already handed to the blocking pool finishes and is dropped
    renderer.abort();
    drop(out_tx);
    let _ = writer.await;
}

async fn render_loop(state: Arc<ServiceState>, pending: Pending, wake: Arc<Notify>, out: mpsc::Sender<Message>) {
    loop {
        wake.notified().await;
        let Some(pose) = pending.lock().expect("pending lock").take() else {
            continue;
        };
        let st = state.clone();
        let rendered = tokio::task::spawn_blocking(move || render_pose(&st.model, &pose)).await;
        let msg = match rendered {
            Ok(Ok((header, png))) => Message::Binary(encode_frame(&header, &png).into()),
            Ok(Err(notice)) => Message::Text(notice.to_json().into()),
            Err(e) => Message::Text(Notice::error(None, None, format!("render task failed: {e}")).to_json().into()),
        };
        if out.send(msg).await.is_err() {
            break;
        }
    }
}
