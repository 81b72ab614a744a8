//! Minimal OpenAI-compatible HTTP server with scripted replies, for tests.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use crate::tokenizer::estimate_tokens;

/// Scripted reply: HTTP status plus assistant content (or error body).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockReply {
    pub status: u16,
    pub content: String,
}

impl MockReply {
    pub fn ok(content: impl Into<String>) -> Self {
        Self { status: 200, content: content.into() }
    }

    pub fn error(status: u16, body: impl Into<String>) -> Self {
        Self { status, content: body.into() }
    }
}

type Responder = dyn Fn(&Value) -> MockReply + Send + Sync;

struct Shared {
    responder: Box<Responder>,
    requests: Mutex<Vec<Value>>,
}

/// Serves `POST /v1/chat/completions` on a random local port and captures
/// every request body.
pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    runtime: Option<tokio::runtime::Runtime>,
}

impl MockServer {
    pub fn start(responder: impl Fn(&Value) -> MockReply + Send + Sync + 'static) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let shared = Arc::new(Shared { responder: Box::new(responder), requests: Mutex::new(Vec::new()) });
        let app = Router::new().route("/v1/chat/completions", post(handle)).with_state(Arc::clone(&shared));
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        runtime.spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self { addr, shared, shutdown: Some(tx), runtime: Some(runtime) })
    }

    /// Base URL including `/v1`.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn requests(&self) -> Vec<Value> {
        self.shared.requests.lock().expect("capture lock").clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared.requests.lock().expect("capture lock").len()
    }

    /// The user message of a captured request.
    pub fn prompt_of(request: &Value) -> &str {
        request["messages"][0]["content"].as_str().unwrap_or_default()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(runtime) = self.runtime.take() {
            runtime.shutdown_background();
        }
    }
}

async fn handle(State(shared): State<Arc<Shared>>, Json(body): Json<Value>) -> Response {
    shared.requests.lock().expect("capture lock").push(body.clone());
    let reply = (shared.responder)(&body);
    if reply.status != 200 {
        let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        return (status, Json(json!({"error": {"message": reply.content}}))).into_response();
    }
    let prompt = MockServer::prompt_of(&body);
    let finish = if body["max_tokens"] == 1 { "length" } else { "stop" };
    Json(json!({
        "id": "chatcmpl-mock",
        "object": "chat.completion",
        "created": 0,
        "model": body["model"],
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": reply.content},
            "finish_reason": finish,
        }],
        "usage": {
            "prompt_tokens": estimate_tokens(prompt),
            "completion_tokens": estimate_tokens(&reply.content),
            "total_tokens": estimate_tokens(prompt) + estimate_tokens(&reply.content),
        },
    }))
    .into_response()
}
