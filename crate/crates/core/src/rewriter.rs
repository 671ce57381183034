//! Profile-based rewriting of self-referential queries.
//!
//! The backend names which profile slots a query relies on (via a
//! `rewrite_query` call). Each slot is anchored to a phrase in the query
//! ("my location", "my qualifications", ...) and that phrase is replaced by
//! the rendered profile value. Text outside the anchored phrases is never
//! touched.

use futures::StreamExt;
use serde::{Deserialize, Serialize};

use crate::domain::{MemberProfile, Query, Span, ToolCall};
use crate::gateway::prompt::{build_request, PromptTask};
use crate::gateway::{complete_stream, tool_calls, LlmBackend};
use crate::planner::{PlanOptions, PlannerError};
use crate::taxonomy::Taxonomy;

pub const REWRITE_TOOL: &str = "rewrite_query";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Location,
    Title,
    Skills,
    Industry,
    Education,
    Experience,
}

impl Slot {
    pub const ALL: [Slot; 6] = [Slot::Location, Slot::Title, Slot::Skills, Slot::Industry, Slot::Education, Slot::Experience];

    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Location => "location",
            Slot::Title => "title",
            Slot::Skills => "skills",
            Slot::Industry => "industry",
            Slot::Education => "education",
            Slot::Experience => "experience",
        }
    }

    pub fn parse(s: &str) -> Option<Slot> {
        Slot::ALL.into_iter().find(|x| x.as_str() == s.trim().to_ascii_lowercase())
    }

    /// Profile field a slot draws from.
    pub fn profile_field(self) -> &'static str {
        match self {
            Slot::Location => "location",
            Slot::Title => "titles",
            Slot::Skills => "skills",
            Slot::Industry => "industries",
            Slot::Education => "education",
            Slot::Experience => "years_experience",
        }
    }

    /// Position when several slots share one phrase.
    fn render_rank(self) -> u8 {
        match self {
            Slot::Title => 0,
            Slot::Location => 1,
            Slot::Industry => 2,
            Slot::Skills => 3,
            Slot::Education => 4,
            Slot::Experience => 5,
        }
    }
}

/// Self-reference phrases and the slots each one stands for.
pub const PHRASES: &[(&str, &[Slot])] = &[
    ("my location", &[Slot::Location]),
    ("my area", &[Slot::Location]),
    ("my city", &[Slot::Location]),
    ("my region", &[Slot::Location]),
    ("my title", &[Slot::Title]),
    ("my job title", &[Slot::Title]),
    ("my role", &[Slot::Title]),
    ("my current role", &[Slot::Title]),
    ("my position", &[Slot::Title]),
    ("my skills", &[Slot::Skills]),
    ("my skill set", &[Slot::Skills]),
    ("my skillset", &[Slot::Skills]),
    ("my expertise", &[Slot::Skills]),
    ("my industry", &[Slot::Industry]),
    ("my field", &[Slot::Industry]),
    ("my sector", &[Slot::Industry]),
    ("my education", &[Slot::Education]),
    ("my degree", &[Slot::Education]),
    ("my experience", &[Slot::Experience]),
    ("my experience level", &[Slot::Experience]),
    ("my years of experience", &[Slot::Experience]),
    ("my qualifications", &[Slot::Title, Slot::Skills, Slot::Experience]),
    ("my profile", &[Slot::Title, Slot::Location, Slot::Skills]),
    ("my resume", &[Slot::Title, Slot::Location, Slot::Skills]),
    ("my cv", &[Slot::Title, Slot::Location, Slot::Skills]),
];

#[derive(Debug, Clone, PartialEq, Eq)]
struct Anchor {
    span: Span,
    slots: &'static [Slot],
}

/// Non-overlapping phrase matches, leftmost-longest, on word boundaries.
fn anchors(text: &str) -> Vec<Anchor> {
    let chars: Vec<char> = text.chars().map(|c| c.to_ascii_lowercase()).collect();
    let boundary = |i: usize| i == 0 || i >= chars.len() || !chars[i].is_alphanumeric();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let best = PHRASES
            .iter()
            .filter(|(p, _)| {
                let p: Vec<char> = p.chars().collect();
                i + p.len() <= chars.len()
                    && chars[i..i + p.len()] == p[..]
                    && (i == 0 || boundary(i - 1))
                    && boundary(i + p.len())
            })
            .max_by_key(|(p, _)| p.chars().count());
        match best {
            Some((p, slots)) => {
                let len = p.chars().count();
                out.push(Anchor { span: Span { start: i, end: i + len }, slots });
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

/// Slots implied by the phrases present in `text`, without asking a model.
pub fn lexical_slots(text: &str) -> Vec<Slot> {
    let mut slots: Vec<Slot> = Vec::new();
    for a in anchors(text) {
        for s in a.slots {
            if !slots.contains(s) {
                slots.push(*s);
            }
        }
    }
    slots
}

/// Slot list from a `rewrite_query` call: `slots` is a list of names or a
/// comma-separated string. Duplicates are dropped.
pub fn parse_slots(call: &ToolCall) -> Result<Vec<Slot>, PlannerError> {
    let malformed = |m: String| PlannerError::BackendMalformed(m);
    if call.tool_name != REWRITE_TOOL {
        return Err(malformed(format!("expected {REWRITE_TOOL}, got {}", call.tool_name)));
    }
    let names: Vec<String> = match call.arg("slots") {
        Some(serde_json::Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| malformed("slot list holds a non-string".into())))
            .collect::<Result<_, _>>()?,
        Some(serde_json::Value::String(s)) => {
            s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
        }
        _ => return Err(malformed("rewrite_query needs a slots list".into())),
    };
    let mut slots = Vec::new();
    for n in names {
        let slot = Slot::parse(&n).ok_or_else(|| malformed(format!("unknown slot '{n}'")))?;
        if !slots.contains(&slot) {
            slots.push(slot);
        }
    }
    Ok(slots)
}

/// Asks the backend which slots `query` relies on.
pub async fn detect_slots(
    query: &Query,
    profile: Option<&MemberProfile>,
    backend: &dyn LlmBackend,
    opts: &PlanOptions,
) -> Result<Vec<Slot>, PlannerError> {
    let request = build_request(PromptTask::Rewrite, &query.text, profile, "", &opts.model, opts.timeout_ms);
    let mut calls = tool_calls(complete_stream(backend, &request));
    while let Some(call) = calls.next().await {
        let call = call?;
        if call.tool_name == REWRITE_TOOL {
            return parse_slots(&call);
        }
    }
    Err(PlannerError::BackendMalformed(format!("response has no {REWRITE_TOOL} call")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlotFill {
    pub slot: Slot,
    pub profile_field: &'static str,
    pub text: String,
    /// Character span of the replaced phrase in the original query.
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RewriteOutcome {
    pub rewritten: String,
    pub slots_filled: Vec<SlotFill>,
    /// Slots with no profile data, or with no anchoring phrase in the query.
    pub unfilled: Vec<Slot>,
}

impl RewriteOutcome {
    /// True when nothing was substituted; the query should then be routed
    /// as a plain criteria search.
    pub fn is_noop(&self) -> bool {
        self.slots_filled.is_empty()
    }
}

fn render_slot(slot: Slot, profile: &MemberProfile, taxonomy: Option<&Taxonomy>) -> Option<String> {
    match slot {
        Slot::Location => profile.location.as_ref().map(|l| l.render()),
        Slot::Title => profile.titles.first().cloned(),
        Slot::Skills => (!profile.skills.is_empty()).then(|| profile.skills.iter().take(3).cloned().collect::<Vec<_>>().join(", ")),
        Slot::Industry => profile.industries.first().map(|id| {
            taxonomy.and_then(|t| t.industry(id)).map(|i| i.name.clone()).unwrap_or_else(|| id.clone())
        }),
        Slot::Education => profile.education.first().cloned(),
        Slot::Experience => profile.years_experience.map(|n| {
            format!("{n} year{} of experience", if n == 1 { "" } else { "s" })
        }),
    }
}

/// Joins the parts for one phrase: the first plainly, places and industries
/// after "in", the rest after "with".
fn compose(parts: &[(Slot, String)]) -> String {
    let mut out = parts[0].1.clone();
    let mut with: Vec<&str> = Vec::new();
    for (slot, text) in &parts[1..] {
        match slot {
            Slot::Location | Slot::Industry => {
                out.push_str(" in ");
                out.push_str(text);
            }
            _ => with.push(text),
        }
    }
    if !with.is_empty() {
        out.push_str(" with ");
        out.push_str(&with.join(" and "));
    }
    out
}

pub fn rewrite(text: &str, slots: &[Slot], profile: Option<&MemberProfile>, taxonomy: Option<&Taxonomy>) -> RewriteOutcome {
    let empty = MemberProfile::default();
    let profile = profile.unwrap_or(&empty);
    let mut wanted: Vec<Slot> = Vec::new();
    for s in slots {
        if !wanted.contains(s) {
            wanted.push(*s);
        }
    }

    let chars: Vec<char> = text.chars().collect();
    let mut rewritten = String::with_capacity(text.len());
    let mut cursor = 0;
    let mut filled = Vec::new();
    let mut unfilled = Vec::new();
    let mut anchored: Vec<Slot> = Vec::new();

    for anchor in anchors(text) {
        let mut here: Vec<Slot> =
            anchor.slots.iter().copied().filter(|s| wanted.contains(s) && !anchored.contains(s)).collect();
        if here.is_empty() {
            continue;
        }
        here.sort_by_key(|s| s.render_rank());
        anchored.extend(&here);
        let mut parts = Vec::new();
        for slot in here {
            match render_slot(slot, profile, taxonomy) {
                Some(v) => parts.push((slot, v)),
                None => unfilled.push(slot),
            }
        }
        if parts.is_empty() {
            continue;
        }
        rewritten.extend(&chars[cursor..anchor.span.start]);
        rewritten.push_str(&compose(&parts));
        cursor = anchor.span.end;
        for (slot, text) in parts {
            filled.push(SlotFill { slot, profile_field: slot.profile_field(), text, span: anchor.span });
        }
    }
    rewritten.extend(&chars[cursor..]);
    unfilled.extend(wanted.iter().filter(|s| !anchored.contains(s)));
    RewriteOutcome { rewritten, slots_filled: filled, unfilled }
}
