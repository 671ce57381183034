use std::sync::Arc;

use futures::future::{self, BoxFuture};
use futures::stream::{Stream, StreamExt};
use tokio::time::Instant;

use super::{Registry, ToolOutcome, ToolResult};
use crate::domain::{MemberProfile, ToolCall};
use crate::taxonomy::Taxonomy;

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

/// Per-request inputs shared by every tool execution.
#[derive(Debug, Clone)]
pub struct ExecContext {
    pub query_text: Option<Arc<str>>,
    pub profile: Option<Arc<MemberProfile>>,
    pub taxonomy: Arc<Taxonomy>,
}

impl ExecContext {
    pub fn new(taxonomy: Arc<Taxonomy>) -> Self {
        Self { query_text: None, profile: None, taxonomy }
    }

    pub fn with_query(mut self, text: &str) -> Self {
        self.query_text = Some(Arc::from(text));
        self
    }

    pub fn with_profile(mut self, profile: Option<Arc<MemberProfile>>) -> Self {
        self.profile = profile;
        self
    }
}

pub trait ToolExecutor: Send + Sync {
    fn run(&self, call: ToolCall, ctx: &ExecContext) -> BoxFuture<'static, ToolOutcome>;
}

/// Runs the pure registry executors.
#[derive(Debug, Clone)]
pub struct RegistryExecutor {
    registry: Arc<Registry>,
}

impl RegistryExecutor {
    pub fn new(registry: Arc<Registry>) -> Self {
        Self { registry }
    }
}

impl ToolExecutor for RegistryExecutor {
    fn run(&self, call: ToolCall, ctx: &ExecContext) -> BoxFuture<'static, ToolOutcome> {
        let out = self.registry.execute(&call, ctx.query_text.as_deref(), ctx.profile.as_deref(), &ctx.taxonomy);
        Box::pin(future::ready(out))
    }
}

/// Executes calls as they arrive, at most `max_in_flight` at a time, and
/// returns one result per call in `call_index` order. A call starts as soon
/// as the stream yields it and a slot is free; failures never affect
/// siblings.
pub async fn execute_all<S>(
    calls: S,
    executor: &dyn ToolExecutor,
    ctx: &ExecContext,
    max_in_flight: usize,
) -> Vec<ToolResult>
where
    S: Stream<Item = ToolCall>,
{
    let mut results: Vec<ToolResult> = calls
        .map(|call| {
            let call_index = call.call_index;
            let started = Instant::now();
            let fut = executor.run(call, ctx);
            async move {
                let outcome = fut.await;
                ToolResult {
                    call_index,
                    outcome,
                    duration_ms: started.elapsed().as_secs_f64() * 1000.0,
                }
            }
        })
        .buffer_unordered(max_in_flight.max(1))
        .collect()
        .await;
    results.sort_by_key(|r| r.call_index);
    results
}
