//! A scripted chat-completions server for offline runs and tests.
//!
//! Every POST is treated as a chat-completions call. The server pulls the
//! original query out of the prompt, looks it up in a [`RewriteScript`]
//! (keyed by original query text, split by prompt kind) and answers with
//! the scripted rewrite, or echoes the query when it has no entry.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use super::prompt::{extract_original_query, sha256_hex, PromptKind};
use super::RewriteScript;
use crate::{Error, Result};

struct MockState {
    script: RewriteScript,
    fail_first: usize,
    requests: AtomicUsize,
}

pub struct MockLlmServer {
    addr: SocketAddr,
    state: Arc<MockState>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for MockLlmServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockLlmServer")
            .field("addr", &self.addr)
            .finish()
    }
}

async fn handle(State(state): State<Arc<MockState>>, body: Bytes) -> Response {
    let n = state.requests.fetch_add(1, Ordering::SeqCst);
    if n < state.fail_first {
        return (StatusCode::SERVICE_UNAVAILABLE, "scripted failure").into_response();
    }
    let Ok(request) = serde_json::from_slice::<Value>(&body) else {
        return (StatusCode::BAD_REQUEST, "body is not JSON").into_response();
    };
    let content = request["messages"]
        .as_array()
        .and_then(|m| m.last())
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default();
    let kind = if content.contains("\nToken attributions: ") {
        PromptKind::Guided
    } else {
        PromptKind::Plain
    };
    let original = extract_original_query(content).unwrap_or_default();
    let reply = state.script.lookup(kind, original).unwrap_or(original);
    let id = format!("mock-{}", &sha256_hex(content)[..16]);
    Json(json!({
        "id": id,
        "object": "chat.completion",
        "model": request["model"],
        "choices": [{
            "index": 0,
            "message": { "role": "assistant", "content": reply },
            "finish_reason": "stop",
        }],
    }))
    .into_response()
}

impl MockLlmServer {
    /// Binds `bind` (e.g. `127.0.0.1:0`) and serves on a background thread.
    /// The first `fail_first` requests are answered with HTTP 503.
    pub fn start(script: RewriteScript, bind: &str, fail_first: usize) -> Result<Self> {
        let listener = std::net::TcpListener::bind(bind).map_err(|e| Error::io(bind, e))?;
        let addr = listener.local_addr().map_err(|e| Error::io(bind, e))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| Error::io(bind, e))?;
        let state = Arc::new(MockState {
            script,
            fail_first,
            requests: AtomicUsize::new(0),
        });
        let (tx, rx) = oneshot::channel::<()>();
        let app = Router::new().fallback(handle).with_state(state.clone());
        let runtime = tokio::runtime::Builder::new_current_thread()
            .enable_io()
            .build()
            .map_err(|e| Error::io(bind, e))?;
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => {
                        log::error!("mock LLM server: {e}");
                        return;
                    }
                };
                let shutdown = async {
                    let _ = rx.await;
                };
                if let Err(e) = axum::serve(listener, app)
                    .with_graceful_shutdown(shutdown)
                    .await
                {
                    log::error!("mock LLM server: {e}");
                }
            });
        });
        Ok(MockLlmServer {
            addr,
            state,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Chat-completions URL of this server.
    pub fn endpoint(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.state.requests.load(Ordering::SeqCst)
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) {
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for MockLlmServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}
