//! Streaming client for chat-completion compatible HTTP endpoints.
//!
//! Wire format (see `docs/protocol.md`): `POST {endpoint}/chat/completions`
//! with `"stream": true`; the response is a server-sent-event stream whose
//! `data:` payloads carry `choices[0].delta.content` fragments, terminated by
//! `data: [DONE]`.

use std::collections::VecDeque;
use std::sync::Arc;

use bytes::Bytes;
use futures::stream::{self, BoxStream, StreamExt};
use serde_json::{json, Value};
use tokio::sync::{OwnedSemaphorePermit, Semaphore};

use super::sse::SseDecoder;
use super::{ChatChunk, ChatRequest, ChunkStream, GatewayError, LlmBackend, Role};

pub const ENV_ENDPOINT: &str = "QUERYWISE_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "QUERYWISE_LLM_API_KEY";
pub const ENV_MODEL: &str = "QUERYWISE_LLM_MODEL";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveConfig {
    /// Base URL, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    /// Upper bound on concurrently open response streams.
    pub max_connections: usize,
}

impl LiveConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            model: model.into(),
            max_connections: 64,
        }
    }

    /// Reads endpoint, credential and model id from the environment.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).ok()?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_string());
        Some(Self {
            api_key: std::env::var(ENV_API_KEY).ok(),
            ..Self::new(endpoint, model)
        })
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.trim_end_matches('/'))
    }
}

pub struct LiveBackend {
    client: reqwest::Client,
    config: LiveConfig,
    permits: Arc<Semaphore>,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, GatewayError> {
        let client = reqwest::Client::builder()
            .pool_max_idle_per_host(config.max_connections)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let permits = Arc::new(Semaphore::new(config.max_connections.max(1)));
        Ok(Self { client, config, permits })
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }
}

pub(crate) fn request_body(request: &ChatRequest, default_model: &str) -> Value {
    let model = if request.model.is_empty() { default_model } else { &request.model };
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
            };
            json!({"role": role, "content": m.content})
        })
        .collect();
    json!({"model": model, "messages": messages, "stream": true})
}

struct Decoding {
    body: BoxStream<'static, reqwest::Result<Bytes>>,
    decoder: SseDecoder,
    queue: VecDeque<Result<ChatChunk, GatewayError>>,
    sent_final: bool,
    done: bool,
    _permit: OwnedSemaphorePermit,
}

impl Decoding {
    fn handle_data(&mut self, data: &str) {
        if data == "[DONE]" {
            if !self.sent_final {
                self.queue.push_back(Ok(ChatChunk::last("", None)));
                self.sent_final = true;
            }
            self.done = true;
            return;
        }
        if self.sent_final {
            return;
        }
        let value: Value = match serde_json::from_str(data) {
            Ok(v) => v,
            Err(e) => return self.fail(GatewayError::Protocol(format!("bad event payload: {e}"))),
        };
        if let Some(err) = value.get("error") {
            return self.fail(GatewayError::Protocol(format!("upstream error: {err}")));
        }
        let Some(choice) = value.get("choices").and_then(|c| c.get(0)) else {
            return self.fail(GatewayError::Protocol("event has no choices[0]".into()));
        };
        let content = match choice.get("delta").and_then(|d| d.get("content")) {
            None | Some(Value::Null) => "",
            Some(Value::String(s)) => s.as_str(),
            Some(_) => return self.fail(GatewayError::Protocol("delta.content is not a string".into())),
        };
        match choice.get("finish_reason") {
            Some(Value::String(reason)) => {
                self.queue.push_back(Ok(ChatChunk::last(content, Some(reason.clone()))));
                self.sent_final = true;
            }
            None | Some(Value::Null) => {
                if !content.is_empty() {
                    self.queue.push_back(Ok(ChatChunk::partial(content)));
                }
            }
            Some(_) => self.fail(GatewayError::Protocol("finish_reason is not a string".into())),
        }
    }

    fn fail(&mut self, e: GatewayError) {
        self.queue.push_back(Err(e));
        self.done = true;
    }
}

fn decode(response: reqwest::Response, permit: OwnedSemaphorePermit) -> ChunkStream {
    let state = Decoding {
        body: response.bytes_stream().boxed(),
        decoder: SseDecoder::new(),
        queue: VecDeque::new(),
        sent_final: false,
        done: false,
        _permit: permit,
    };
    stream::unfold(state, |mut st| async move {
        loop {
            if let Some(item) = st.queue.pop_front() {
                return Some((item, st));
            }
            if st.done {
                return None;
            }
            match st.body.next().await {
                Some(Ok(bytes)) => match st.decoder.push(&bytes) {
                    Ok(events) => {
                        for ev in events {
                            if st.done {
                                break;
                            }
                            st.handle_data(&ev.data);
                        }
                    }
                    Err(_) => st.fail(GatewayError::Protocol("event stream is not UTF-8".into())),
                },
                Some(Err(e)) => st.fail(GatewayError::Transport(e.to_string())),
                None => {
                    if let Some(ev) = st.decoder.finish() {
                        st.handle_data(&ev.data);
                    }
                    if !st.done {
                        st.fail(GatewayError::Protocol("stream closed before the done marker".into()));
                    }
                }
            }
        }
    })
    .boxed()
}

impl LlmBackend for LiveBackend {
    fn name(&self) -> &str {
        "live"
    }

    fn open_stream(&self, request: &ChatRequest) -> ChunkStream {
        let client = self.client.clone();
        let url = self.config.completions_url();
        let key = self.config.api_key.clone();
        let body = request_body(request, &self.config.model);
        let permits = self.permits.clone();
        let start = async move {
            let permit = permits
                .acquire_owned()
                .await
                .map_err(|_| GatewayError::Transport("connection pool closed".into()))?;
            let mut builder = client.post(url).header("accept", "text/event-stream").json(&body);
            if let Some(key) = key {
                builder = builder.bearer_auth(key);
            }
            let response = builder.send().await.map_err(|e| GatewayError::Transport(e.to_string()))?;
            let status = response.status();
            if !status.is_success() {
                let text = response.text().await.unwrap_or_default();
                return Err(GatewayError::Transport(format!("HTTP {status}: {text}")));
            }
            Ok((response, permit))
        };
        stream::once(start)
            .flat_map(|opened| match opened {
                Ok((response, permit)) => decode(response, permit),
                Err(e) => stream::once(async move { Err(e) }).boxed(),
            })
            .boxed()
    }
}
