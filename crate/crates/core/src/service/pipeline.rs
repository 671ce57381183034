//! End-to-end query understanding.
//!
//! In the default combined mode one backend call returns the routing call,
//! rewrite slots and facet calls in a single streamed response. Facet calls
//! are handed to the executors as soon as the parser completes them (after
//! the route is known), so tool execution overlaps generation. A trust
//! violation stops reading the stream and nothing is executed.
//!
//! Timing stages are disjoint: `backend` runs until the response stream
//! ends, `tools` covers executions still running after that, then `rewrite`
//! and `suggest`. Their sum never exceeds `total`.

use std::sync::Arc;

use futures::channel::mpsc;
use futures::future::BoxFuture;
use futures::stream::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::Instant;

use super::config::{BackendKind, CallMode, Settings};
use super::latency::LatencyRecorder;
use crate::domain::{
    validate_result, FacetTag, IntentRoute, MemberProfile, Query, Timings, ToolCall, UnderstandingResult,
};
use crate::eval::{LabeledExample, Prediction, Understand};
use crate::gateway::prompt::{build_request, PromptTask};
use crate::gateway::{
    complete_stream, tool_calls, LiveBackend, LiveConfig, LlmBackend, MockBackend, MockScript, MockScriptError,
    ToolCallStream,
};
use crate::planner::{self, Action, PlanDecision, PlanOptions, PlannerError, RouteSignals, ROUTE_TOOL};
use crate::rewriter::{self, parse_slots, RewriteOutcome, Slot, REWRITE_TOOL};
use crate::suggest::suggest;
use crate::taxonomy::{Taxonomy, TaxonomyError};
use crate::tools::{execute_all, ExecContext, Registry, RegistryExecutor, ToolExecutor, ToolResult};

pub const BUNDLED_TAXONOMY: &str = include_str!("../../data/taxonomy.json");
pub const BUNDLED_MOCK_SCRIPT: &str = include_str!("../../data/mock_script.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnderstandRequest {
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<MemberProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

impl UnderstandRequest {
    pub fn new(query: impl Into<String>) -> Self {
        Self { query: query.into(), profile: None, locale: None, request_id: None }
    }

    pub fn with_profile(mut self, profile: MemberProfile) -> Self {
        self.profile = Some(profile);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnderstandError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("backend exhausted the {budget_ms}ms budget")]
    BudgetExhausted { budget_ms: u64 },
}

#[derive(Debug, Error)]
pub enum EngineBuildError {
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    MockScript(#[from] MockScriptError),
    #[error("backend: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineOptions {
    pub model: String,
    pub timeout_ms: u64,
    pub call_mode: CallMode,
    /// Degrade to a pass-through instead of failing when the budget runs out
    /// before a route is known.
    pub degrade: bool,
    pub max_in_flight: usize,
    pub top_k: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions::from(&Settings::default())
    }
}

impl From<&Settings> for EngineOptions {
    fn from(s: &Settings) -> Self {
        Self {
            model: s.model.clone(),
            timeout_ms: s.timeout_ms,
            call_mode: s.call_mode,
            degrade: s.degrade,
            max_in_flight: s.max_in_flight,
            top_k: s.top_k,
        }
    }
}

pub struct Engine {
    backend: Arc<dyn LlmBackend>,
    taxonomy: Arc<Taxonomy>,
    registry: Arc<Registry>,
    executor: Arc<dyn ToolExecutor>,
    latency: Arc<LatencyRecorder>,
    catalog: String,
    opts: EngineOptions,
}

/// What one streamed response produced.
struct Streamed {
    signals: RouteSignals,
    slots: Option<Result<Vec<Slot>, PlannerError>>,
    failure: Option<PlannerError>,
    results: Vec<ToolResult>,
    backend_ms: f64,
    tools_ms: f64,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

fn tags_of(results: &[ToolResult]) -> Vec<FacetTag> {
    results.iter().filter_map(|r| r.outcome.tag().cloned()).collect()
}

impl Engine {
    pub fn new(backend: Arc<dyn LlmBackend>, taxonomy: Arc<Taxonomy>, opts: EngineOptions) -> Self {
        let registry = Arc::new(Registry::default());
        Self {
            catalog: registry.catalog(),
            executor: Arc::new(RegistryExecutor::new(registry.clone())),
            registry,
            backend,
            taxonomy,
            latency: Arc::new(LatencyRecorder::default()),
            opts,
        }
    }

    /// Builds the backend and loads the taxonomy named by `settings`,
    /// falling back to the bundled samples.
    pub fn from_settings(settings: &Settings) -> Result<Self, EngineBuildError> {
        let taxonomy = match &settings.taxonomy {
            Some(p) => Taxonomy::load(p)?,
            None => Taxonomy::from_json_str(BUNDLED_TAXONOMY)?,
        };
        let backend: Arc<dyn LlmBackend> = match settings.backend {
            BackendKind::Mock => {
                let script = match &settings.mock_script {
                    Some(p) => MockScript::load(p)?,
                    None => MockScript::from_json_str(BUNDLED_MOCK_SCRIPT)?,
                };
                Arc::new(MockBackend::new(script))
            }
            BackendKind::Live => {
                let endpoint = settings.endpoint.clone().ok_or_else(|| EngineBuildError::Backend("no endpoint".into()))?;
                let config = LiveConfig {
                    api_key: settings.api_key.clone(),
                    max_connections: settings.max_connections,
                    ..LiveConfig::new(endpoint, settings.model.clone())
                };
                Arc::new(LiveBackend::new(config).map_err(|e| EngineBuildError::Backend(e.to_string()))?)
            }
        };
        Ok(Self::new(backend, Arc::new(taxonomy), EngineOptions::from(settings))
            .with_latency(Arc::new(LatencyRecorder::new(settings.latency_capacity))))
    }

    pub fn with_executor(mut self, executor: Arc<dyn ToolExecutor>) -> Self {
        self.executor = executor;
        self
    }

    pub fn with_latency(mut self, latency: Arc<LatencyRecorder>) -> Self {
        self.latency = latency;
        self
    }

    pub fn latency(&self) -> &Arc<LatencyRecorder> {
        &self.latency
    }

    pub fn taxonomy(&self) -> &Arc<Taxonomy> {
        &self.taxonomy
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn options(&self) -> &EngineOptions {
        &self.opts
    }

    fn plan_options(&self, timeout_ms: u64) -> PlanOptions {
        PlanOptions { model: self.opts.model.clone(), timeout_ms }
    }

    fn check(&self, req: &UnderstandRequest) -> Result<(Query, Option<Arc<MemberProfile>>), UnderstandError> {
        let mut query = Query::new(req.query.clone()).map_err(|e| UnderstandError::InvalidInput(e.to_string()))?;
        query.locale = req.locale.clone();
        if let Some(id) = &req.request_id {
            query.request_id = id.clone();
        }
        if let Some(p) = &req.profile {
            p.validate(&self.taxonomy).map_err(|e| UnderstandError::InvalidInput(e.to_string()))?;
        }
        Ok((query, req.profile.clone().map(Arc::new)))
    }

    /// Routing only, with one backend call.
    pub async fn plan(&self, req: &UnderstandRequest) -> Result<PlanDecision, UnderstandError> {
        let (query, profile) = self.check(req)?;
        planner::plan(&query, profile.as_deref(), &*self.backend, &self.plan_options(self.opts.timeout_ms))
            .await
            .map_err(|e| match e {
                PlannerError::BackendTimeout { budget_ms } => UnderstandError::BudgetExhausted { budget_ms },
                other => UnderstandError::InvalidInput(format!("backend output unusable: {other}")),
            })
    }

    /// Slot detection followed by the profile rewrite.
    pub async fn rewrite(&self, req: &UnderstandRequest) -> Result<RewriteOutcome, UnderstandError> {
        let (query, profile) = self.check(req)?;
        let slots = rewriter::detect_slots(&query, profile.as_deref(), &*self.backend, &self.plan_options(self.opts.timeout_ms))
            .await
            .map_err(|e| match e {
                PlannerError::BackendTimeout { budget_ms } => UnderstandError::BudgetExhausted { budget_ms },
                other => UnderstandError::InvalidInput(format!("backend output unusable: {other}")),
            })?;
        Ok(rewriter::rewrite(&query.text, &slots, profile.as_deref(), Some(&self.taxonomy)))
    }

    pub async fn understand(&self, req: &UnderstandRequest) -> Result<UnderstandingResult, UnderstandError> {
        let (query, profile) = self.check(req)?;
        let start = Instant::now();
        let mut result = match self.opts.call_mode {
            CallMode::Combined => self.combined(&query, profile, start).await?,
            CallMode::Split => self.split(&query, profile, start).await?,
        };
        result.timings.total_ms = ms_since(start);
        for (stage, ms) in &result.timings.stages {
            self.latency.record(stage, *ms);
        }
        self.latency.record("total", result.timings.total_ms);
        Ok(result)
    }

    /// Drives a response stream: routing and slot calls are absorbed, facet
    /// calls go to the executors. With `route_known` false, facet calls wait
    /// until a route arrives.
    async fn stream_and_execute(
        &self,
        mut calls: ToolCallStream,
        ctx: &ExecContext,
        route_known: bool,
        start: Instant,
    ) -> Streamed {
        let (tx, rx) = mpsc::unbounded::<ToolCall>();
        let producer = async move {
            let mut tx = Some(tx);
            let mut signals = RouteSignals::default();
            let mut slots = None;
            let mut failure = None;
            let mut pending: Vec<ToolCall> = Vec::new();
            while let Some(item) = calls.next().await {
                let call = match item {
                    Ok(c) => c,
                    Err(e) => {
                        failure = Some(PlannerError::from(e));
                        break;
                    }
                };
                if call.tool_name == REWRITE_TOOL {
                    if !route_known && slots.is_none() {
                        slots = Some(parse_slots(&call));
                    }
                    continue;
                }
                if route_known && call.tool_name == ROUTE_TOOL {
                    continue;
                }
                match signals.observe(&call) {
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                    Ok(true) if signals.is_trust() => {
                        pending.clear();
                        tx = None;
                        break;
                    }
                    Ok(true) => {
                        if let Some(tx) = &tx {
                            for c in pending.drain(..) {
                                let _ = tx.unbounded_send(c);
                            }
                        }
                    }
                    Ok(false) => match (&tx, route_known || signals.route().is_some()) {
                        (Some(tx), true) => {
                            let _ = tx.unbounded_send(call);
                        }
                        _ => pending.push(call),
                    },
                }
            }
            drop(tx);
            (signals, slots, failure, Instant::now())
        };
        let consumer = execute_all(rx, &*self.executor, ctx, self.opts.max_in_flight);
        let ((signals, slots, failure, backend_done), results) = futures::join!(producer, consumer);
        Streamed {
            signals,
            slots,
            failure,
            results,
            backend_ms: (backend_done - start).as_secs_f64() * 1000.0,
            tools_ms: ms_since(backend_done),
        }
    }

    /// Result when no route could be established.
    fn unrouted(&self, failure: PlannerError) -> Result<UnderstandingResult, UnderstandError> {
        match failure {
            PlannerError::BackendTimeout { budget_ms } if !self.opts.degrade => {
                Err(UnderstandError::BudgetExhausted { budget_ms })
            }
            f => Ok(UnderstandingResult::pass_through(f.to_string())),
        }
    }

    fn exec_context(&self, query: &Query, profile: Option<Arc<MemberProfile>>) -> ExecContext {
        ExecContext::new(self.taxonomy.clone()).with_query(&query.text).with_profile(profile)
    }

    async fn combined(
        &self,
        query: &Query,
        profile: Option<Arc<MemberProfile>>,
        start: Instant,
    ) -> Result<UnderstandingResult, UnderstandError> {
        let request = build_request(
            PromptTask::Understand,
            &query.text,
            profile.as_deref(),
            &self.catalog,
            &self.opts.model,
            self.opts.timeout_ms,
        );
        let ctx = self.exec_context(query, profile.clone());
        let calls = tool_calls(complete_stream(&*self.backend, &request));
        let s = self.stream_and_execute(calls, &ctx, false, start).await;

        let mut timings = Timings::default();
        timings.stages.insert("backend".into(), s.backend_ms);
        timings.stages.insert("tools".into(), s.tools_ms);
        let decision = match s.signals.decision() {
            Ok(d) => d,
            Err(e) => {
                let mut r = self.unrouted(s.failure.unwrap_or(e))?;
                r.timings = timings;
                return Ok(r);
            }
        };
        if decision.route == IntentRoute::TrustViolation {
            let mut r = UnderstandingResult::denied(decision.violation.unwrap_or(crate::domain::ViolationCategory::OtherHarmful));
            r.timings = timings;
            return Ok(r);
        }
        let degraded = s.failure.map(|f| format!("partial result: {f}"));
        Ok(self.finish(query, profile.as_deref(), decision, tags_of(&s.results), s.slots, degraded, timings))
    }

    async fn split(
        &self,
        query: &Query,
        profile: Option<Arc<MemberProfile>>,
        start: Instant,
    ) -> Result<UnderstandingResult, UnderstandError> {
        let budget = std::time::Duration::from_millis(self.opts.timeout_ms);
        let remaining = || budget.saturating_sub(start.elapsed()).as_millis().max(1) as u64;
        let mut timings = Timings::default();

        let decision = planner::plan(query, profile.as_deref(), &*self.backend, &self.plan_options(remaining())).await;
        timings.stages.insert("plan".into(), ms_since(start));
        let decision = match decision {
            Ok(d) => d,
            Err(e) => {
                let mut r = self.unrouted(e)?;
                r.timings = timings;
                return Ok(r);
            }
        };
        if decision.route == IntentRoute::TrustViolation {
            let mut r = UnderstandingResult::denied(decision.violation.unwrap_or(crate::domain::ViolationCategory::OtherHarmful));
            r.timings = timings;
            return Ok(r);
        }

        let mut slots = None;
        if decision.has(Action::Rewrite) {
            let t = Instant::now();
            slots = Some(rewriter::detect_slots(query, profile.as_deref(), &*self.backend, &self.plan_options(remaining())).await);
            timings.stages.insert("rewrite_backend".into(), ms_since(t));
        }

        let t = Instant::now();
        let request =
            build_request(PromptTask::Tag, &query.text, profile.as_deref(), &self.catalog, &self.opts.model, remaining());
        let ctx = self.exec_context(query, profile.clone());
        let s = self.stream_and_execute(tool_calls(complete_stream(&*self.backend, &request)), &ctx, true, t).await;
        timings.stages.insert("backend".into(), s.backend_ms);
        timings.stages.insert("tools".into(), s.tools_ms);
        let decision = if s.signals.industry_mentioned() && !decision.has(Action::SuggestFacets) {
            PlanDecision::new(decision.route, decision.rationale, decision.violation, true)
        } else {
            decision
        };
        let degraded = s.failure.map(|f| format!("partial result: {f}"));
        Ok(self.finish(query, profile.as_deref(), decision, tags_of(&s.results), slots, degraded, timings))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        query: &Query,
        profile: Option<&MemberProfile>,
        decision: PlanDecision,
        tags: Vec<FacetTag>,
        slots: Option<Result<Vec<Slot>, PlannerError>>,
        mut degraded: Option<String>,
        mut timings: Timings,
    ) -> UnderstandingResult {
        let mut route = decision.route;
        let mut rewritten_query = None;
        if decision.has(Action::Rewrite) {
            let t = Instant::now();
            let slots = match slots {
                Some(Ok(s)) => s,
                Some(Err(e)) => {
                    degraded.get_or_insert_with(|| format!("rewrite skipped: {e}"));
                    Vec::new()
                }
                None => Vec::new(),
            };
            let out = rewriter::rewrite(&query.text, &slots, profile, Some(&self.taxonomy));
            if out.is_noop() {
                route = IntentRoute::CriteriaSearch;
            } else {
                rewritten_query = Some(out.rewritten);
            }
            timings.stages.insert("rewrite".into(), ms_since(t));
        }
        let mut facet_suggestions = Vec::new();
        if decision.has(Action::SuggestFacets) {
            let t = Instant::now();
            facet_suggestions = suggest(&tags, profile, &self.taxonomy, self.opts.top_k);
            timings.stages.insert("suggest".into(), ms_since(t));
        }
        let result = UnderstandingResult {
            route,
            tags,
            rewritten_query,
            facet_suggestions,
            denial: None,
            timings,
            degraded,
        };
        validate_result(result).unwrap_or_else(|violations| {
            let names: Vec<&str> = violations.iter().map(|v| v.name()).collect();
            UnderstandingResult::pass_through(format!("internal result check failed: {}", names.join(", ")))
        })
    }
}

impl Understand for Engine {
    fn predict<'a>(&'a self, example: &'a LabeledExample) -> BoxFuture<'a, Prediction> {
        Box::pin(async move {
            let req = UnderstandRequest {
                query: example.query.text.clone(),
                profile: example.profile.clone(),
                locale: example.query.locale.clone(),
                request_id: None,
            };
            match self.understand(&req).await {
                Ok(r) => Prediction { route: r.route, tags: r.tags },
                Err(_) => Prediction { route: IntentRoute::CriteriaSearch, tags: Vec::new() },
            }
        })
    }
}

/// Streams of tool calls can also come from outside a backend, e.g. a file.
pub async fn execute_stream<S>(engine: &Engine, calls: S, query_text: Option<&str>) -> Vec<ToolResult>
where
    S: Stream<Item = ToolCall>,
{
    let mut ctx = ExecContext::new(engine.taxonomy.clone());
    if let Some(q) = query_text {
        ctx = ctx.with_query(q);
    }
    execute_all(calls, &*engine.executor, &ctx, engine.opts.max_in_flight).await
}
