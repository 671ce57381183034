//! Versioned prompt templates.
//!
//! Templates are compiled in from `prompts/*.v1.txt`. The first line names the
//! task (`# task: <name>`), which is also what mock scripts key on. The
//! system message carries the rendered template and the user message carries
//! the raw query text, unchanged.

use crate::domain::MemberProfile;

use super::{ChatMessage, ChatRequest};

const UNDERSTAND: &str = include_str!("../../prompts/understand.v1.txt");
const PLAN: &str = include_str!("../../prompts/plan.v1.txt");
const REWRITE: &str = include_str!("../../prompts/rewrite.v1.txt");
const TAG: &str = include_str!("../../prompts/tag.v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptTask {
    /// Combined routing, rewrite slots and tagging in one response.
    Understand,
    Plan,
    Rewrite,
    Tag,
}

impl PromptTask {
    pub const ALL: [PromptTask; 4] = [Self::Understand, Self::Plan, Self::Rewrite, Self::Tag];

    pub fn name(self) -> &'static str {
        match self {
            Self::Understand => "understand",
            Self::Plan => "plan",
            Self::Rewrite => "rewrite",
            Self::Tag => "tag",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            Self::Understand => UNDERSTAND,
            Self::Plan => PLAN,
            Self::Rewrite => REWRITE,
            Self::Tag => TAG,
        }
    }
}

fn profile_block(profile: Option<&MemberProfile>) -> String {
    match profile {
        Some(p) => serde_json::to_string_pretty(p).unwrap_or_else(|_| "{}".into()),
        None => "{}".into(),
    }
}

/// Renders the system prompt for `task`.
pub fn render_system(task: PromptTask, tool_catalog: &str, profile: Option<&MemberProfile>) -> String {
    task.template()
        .replace("{tools}", tool_catalog)
        .replace("{profile}", &profile_block(profile))
}

pub fn build_request(
    task: PromptTask,
    query_text: &str,
    profile: Option<&MemberProfile>,
    tool_catalog: &str,
    model: &str,
    timeout_ms: u64,
) -> ChatRequest {
    ChatRequest::new(
        vec![
            ChatMessage::system(render_system(task, tool_catalog, profile)),
            ChatMessage::user(query_text),
        ],
        model,
        timeout_ms,
    )
}
