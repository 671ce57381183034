//! Backend abstraction for chat-completion style models.
//!
//! [`LlmBackend`] implementations open a lazy stream of [`ChatChunk`]s.
//! [`complete_stream`] wraps any backend with request validation and the
//! per-request time budget; callers should go through it rather than calling
//! [`LlmBackend::open_stream`] directly.

mod calls;
mod live;
mod mock;
pub mod prompt;
mod sse;

use std::pin::Pin;
use std::time::Duration;

use futures::stream::{self, BoxStream, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::Instant;

pub use calls::{tool_calls, CallStreamError, ToolCallStream};
pub use live::{LiveBackend, LiveConfig, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};
pub use mock::{MockBackend, MockRule, MockScript, MockScriptError, RuleMatcher};
pub use sse::{SseDecoder, SseEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub model: String,
    pub stream: bool,
    pub timeout_ms: u64,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>, model: impl Into<String>, timeout_ms: u64) -> Self {
        Self {
            messages,
            model: model.into(),
            stream: true,
            timeout_ms,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(GatewayError::InvalidRequest("request has no user message".into()));
        }
        if self.timeout_ms < 1 {
            return Err(GatewayError::InvalidRequest("timeout_ms must be at least 1".into()));
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// Task name declared on the first line of the system prompt
    /// (`# task: <name>`), if any.
    pub fn task(&self) -> Option<&str> {
        let system = self.messages.iter().find(|m| m.role == Role::System)?;
        let first = system.content.lines().next()?;
        first.strip_prefix("# task:").map(str::trim)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatChunk {
    pub delta: String,
    pub finished: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
}

impl ChatChunk {
    pub fn partial(delta: impl Into<String>) -> Self {
        Self { delta: delta.into(), finished: false, finish_reason: None }
    }

    pub fn last(delta: impl Into<String>, reason: Option<String>) -> Self {
        Self { delta: delta.into(), finished: true, finish_reason: reason }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("backend exceeded its {budget_ms}ms budget")]
    Timeout { budget_ms: u64 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub type ChunkStream = BoxStream<'static, Result<ChatChunk, GatewayError>>;

/// A chat-completion compatible model endpoint.
pub trait LlmBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Opens a response stream. Errors such as refused connections surface as
    /// the first stream item.
    fn open_stream(&self, request: &ChatRequest) -> ChunkStream;
}

impl<T: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn open_stream(&self, request: &ChatRequest) -> ChunkStream {
        (**self).open_stream(request)
    }
}

struct Budgeted {
    inner: Option<ChunkStream>,
    deadline: Instant,
    budget_ms: u64,
}

/// Streams the response for `request`, enforcing `request.timeout_ms` over
/// the whole stream. Chunks delivered before the deadline stay delivered; the
/// stream then yields one [`GatewayError::Timeout`] and ends. Nothing is
/// yielded after a terminal chunk or error.
pub fn complete_stream(backend: &dyn LlmBackend, request: &ChatRequest) -> ChunkStream {
    if let Err(e) = request.validate() {
        return stream::once(async move { Err(e) }).boxed();
    }
    let state = Budgeted {
        inner: Some(backend.open_stream(request)),
        deadline: Instant::now() + Duration::from_millis(request.timeout_ms),
        budget_ms: request.timeout_ms,
    };
    stream::unfold(state, |mut st| async move {
        let inner = st.inner.as_mut()?;
        let item = match tokio::time::timeout_at(st.deadline, inner.next()).await {
            Err(_) => Some(Err(GatewayError::Timeout { budget_ms: st.budget_ms })),
            Ok(None) => Some(Err(GatewayError::Protocol("stream ended without a final chunk".into()))),
            Ok(Some(item)) => Some(item),
        };
        let terminal = matches!(&item, Some(Err(_)) | Some(Ok(ChatChunk { finished: true, .. })));
        if terminal {
            st.inner = None;
        }
        item.map(|i| (i, st))
    })
    .boxed()
}

/// Collects a stream into the full response text.
pub async fn collect_text<S>(mut stream: Pin<&mut S>) -> Result<String, GatewayError>
where
    S: Stream<Item = Result<ChatChunk, GatewayError>> + ?Sized,
{
    let mut out = String::new();
    while let Some(chunk) = stream.next().await {
        out.push_str(&chunk?.delta);
    }
    Ok(out)
}
