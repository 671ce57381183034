//! Intent routing and the action plan each route implies.
//!
//! The backend signals its routing decision through a `route_query` tool
//! call whose `category` argument is one name or a list of names. When
//! several routes are signalled the highest-precedence one wins:
//! trust violation, then self reference, then criteria, then non-job.

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Facet, IntentRoute, MemberProfile, Query, ToolCall, ViolationCategory};
use crate::gateway::prompt::{build_request, PromptTask};
use crate::gateway::{complete_stream, tool_calls, CallStreamError, GatewayError, LlmBackend};

pub const ROUTE_TOOL: &str = "route_query";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Deny,
    Rewrite,
    Tag,
    SuggestFacets,
    ForwardFlagged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDecision {
    pub route: IntentRoute,
    pub actions: Vec<Action>,
    #[serde(default)]
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<ViolationCategory>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlannerError {
    #[error("backend exceeded its {budget_ms}ms budget")]
    BackendTimeout { budget_ms: u64 },
    #[error("backend output could not be routed: {0}")]
    BackendMalformed(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
}

impl From<GatewayError> for PlannerError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Timeout { budget_ms } => PlannerError::BackendTimeout { budget_ms },
            GatewayError::Protocol(m) => PlannerError::BackendMalformed(m),
            GatewayError::Transport(m) | GatewayError::InvalidRequest(m) => PlannerError::BackendUnavailable(m),
        }
    }
}

impl From<CallStreamError> for PlannerError {
    fn from(e: CallStreamError) -> Self {
        match e {
            CallStreamError::Gateway(g) => g.into(),
            CallStreamError::Parse(_) => PlannerError::BackendMalformed(e.to_string()),
        }
    }
}

/// Maps a category name onto a route. Short names and the canonical
/// serialized names are both accepted.
pub fn parse_category(s: &str) -> Option<IntentRoute> {
    match s.trim().to_ascii_lowercase().as_str() {
        "criteria" | "criteria_search" => Some(IntentRoute::CriteriaSearch),
        "self_reference" | "self_reference_search" => Some(IntentRoute::SelfReferenceSearch),
        "non_job" | "non_job_related" => Some(IntentRoute::NonJobRelated),
        "trust_violation" => Some(IntentRoute::TrustViolation),
        _ => None,
    }
}

pub fn resolve_precedence(routes: impl IntoIterator<Item = IntentRoute>) -> Option<IntentRoute> {
    routes.into_iter().max_by_key(|r| r.precedence())
}

/// Route signalled by one `route_query` call.
pub fn route_of(call: &ToolCall) -> Result<IntentRoute, PlannerError> {
    if call.tool_name != ROUTE_TOOL {
        return Err(PlannerError::BackendMalformed(format!("expected {ROUTE_TOOL}, got {}", call.tool_name)));
    }
    let names: Vec<&str> = match call.arg("category") {
        Some(serde_json::Value::String(s)) => vec![s.as_str()],
        Some(serde_json::Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().ok_or_else(|| PlannerError::BackendMalformed("category list holds a non-string".into())))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(PlannerError::BackendMalformed("category must be a string or list".into())),
        None => return Err(PlannerError::BackendMalformed("route_query has no category".into())),
    };
    let routes = names
        .iter()
        .map(|n| parse_category(n).ok_or_else(|| PlannerError::BackendMalformed(format!("unknown category '{n}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    resolve_precedence(routes).ok_or_else(|| PlannerError::BackendMalformed("empty category list".into()))
}

pub fn actions_for(route: IntentRoute, suggest_facets: bool) -> Vec<Action> {
    let mut actions = match route {
        IntentRoute::TrustViolation => return vec![Action::Deny],
        IntentRoute::SelfReferenceSearch => vec![Action::Rewrite, Action::Tag],
        IntentRoute::CriteriaSearch => vec![Action::Tag],
        IntentRoute::NonJobRelated => vec![Action::ForwardFlagged, Action::Tag],
    };
    if suggest_facets {
        actions.push(Action::SuggestFacets);
    }
    actions
}

impl PlanDecision {
    pub fn new(route: IntentRoute, rationale: impl Into<String>, violation: Option<ViolationCategory>, suggest_facets: bool) -> Self {
        let violation = (route == IntentRoute::TrustViolation)
            .then(|| violation.unwrap_or(ViolationCategory::OtherHarmful));
        Self { route, actions: actions_for(route, suggest_facets), rationale: rationale.into(), violation }
    }

    pub fn has(&self, action: Action) -> bool {
        self.actions.contains(&action)
    }

    /// Checks the route/action consistency rules.
    pub fn check(&self) -> Result<(), String> {
        let pos = |a| self.actions.iter().position(|x| *x == a);
        match self.route {
            IntentRoute::TrustViolation if self.actions != [Action::Deny] => Err("trust route must deny only".into()),
            r if r != IntentRoute::TrustViolation && self.has(Action::Deny) => Err("deny without trust route".into()),
            IntentRoute::SelfReferenceSearch => match (pos(Action::Rewrite), pos(Action::Tag)) {
                (Some(r), Some(t)) if r < t => Ok(()),
                _ => Err("self reference must rewrite before tagging".into()),
            },
            IntentRoute::NonJobRelated if !self.has(Action::ForwardFlagged) => Err("non-job must be forwarded flagged".into()),
            _ => Ok(()),
        }
    }
}

/// Accumulates routing signals from a response's tool calls.
#[derive(Debug, Default, Clone)]
pub struct RouteSignals {
    routes: Vec<IntentRoute>,
    violation: Option<ViolationCategory>,
    rationale: String,
    industry_mentioned: bool,
}

impl RouteSignals {
    /// Records `call`. Returns true if it was a routing call.
    pub fn observe(&mut self, call: &ToolCall) -> Result<bool, PlannerError> {
        if call.tool_name == Facet::Industry.tool_name() {
            self.industry_mentioned = true;
        }
        if call.tool_name != ROUTE_TOOL {
            return Ok(false);
        }
        let route = route_of(call)?;
        if route == IntentRoute::TrustViolation && self.violation.is_none() {
            self.violation = call.arg_str("violation").and_then(ViolationCategory::parse);
        }
        if self.rationale.is_empty() {
            self.rationale = call.arg_str("rationale").unwrap_or_default().to_string();
        }
        self.routes.push(route);
        Ok(true)
    }

    pub fn route(&self) -> Option<IntentRoute> {
        resolve_precedence(self.routes.iter().copied())
    }

    pub fn is_trust(&self) -> bool {
        self.route() == Some(IntentRoute::TrustViolation)
    }

    pub fn industry_mentioned(&self) -> bool {
        self.industry_mentioned
    }

    pub fn decision(&self) -> Result<PlanDecision, PlannerError> {
        let route = self
            .route()
            .ok_or_else(|| PlannerError::BackendMalformed(format!("response has no {ROUTE_TOOL} call")))?;
        Ok(PlanDecision::new(route, self.rationale.clone(), self.violation, self.industry_mentioned))
    }
}

#[derive(Debug, Clone)]
pub struct PlanOptions {
    pub model: String,
    pub timeout_ms: u64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self { model: String::new(), timeout_ms: 600 }
    }
}

/// Routes `query` with one backend call. Reading stops at the first trust
/// signal, so a denied query never reaches tagging or rewriting.
pub async fn plan(
    query: &Query,
    profile: Option<&MemberProfile>,
    backend: &dyn LlmBackend,
    opts: &PlanOptions,
) -> Result<PlanDecision, PlannerError> {
    let request = build_request(PromptTask::Plan, &query.text, profile, "", &opts.model, opts.timeout_ms);
    let mut calls = tool_calls(complete_stream(backend, &request));
    let mut signals = RouteSignals::default();
    while let Some(call) = calls.next().await {
        signals.observe(&call?)?;
        if signals.is_trust() {
            break;
        }
    }
    signals.decision()
}
