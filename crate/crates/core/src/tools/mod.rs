//! Facet-extraction tools: registry, argument validation and executors.

mod exec;
mod normalize;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;

use crate::domain::{Facet, FacetTag, FacetValue, MemberProfile, ResolvedPlace, Span, ToolCall};
use crate::taxonomy::Taxonomy;

pub use exec::{execute_all, ExecContext, RegistryExecutor, ToolExecutor, DEFAULT_MAX_IN_FLIGHT};
pub use normalize::{
    normalize_date_posted, normalize_num_applicants, resolve_location, resolve_location_hinted, LocationResolution,
    DATE_POSTED_ALIASES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgType {
    String,
    Integer,
    Boolean,
    Number,
    StringOrInteger,
}

impl ArgType {
    pub fn accepts(self, v: &Value) -> bool {
        match self {
            ArgType::String => v.is_string(),
            ArgType::Integer => v.is_i64() || v.is_u64(),
            ArgType::Boolean => v.is_boolean(),
            ArgType::Number => v.is_number(),
            ArgType::StringOrInteger => v.is_string() || v.is_i64() || v.is_u64(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArgType::String => "string",
            ArgType::Integer => "integer",
            ArgType::Boolean => "boolean",
            ArgType::Number => "number",
            ArgType::StringOrInteger => "string|integer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArgSpec {
    pub name: &'static str,
    #[serde(rename = "type")]
    pub ty: ArgType,
    pub required: bool,
}

const fn req(name: &'static str, ty: ArgType) -> ArgSpec {
    ArgSpec { name, ty, required: true }
}

const fn opt(name: &'static str, ty: ArgType) -> ArgSpec {
    ArgSpec { name, ty, required: false }
}

/// Every tool also accepts an optional `confidence` in [0, 1].
pub const CONFIDENCE_ARG: ArgSpec = opt("confidence", ArgType::Number);

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ToolSpec {
    pub name: &'static str,
    pub arguments: Vec<ArgSpec>,
    pub produces: Facet,
}

impl ToolSpec {
    fn arg(&self, name: &str) -> Option<&ArgSpec> {
        self.arguments.iter().chain([&CONFIDENCE_ARG]).find(|a| a.name == name)
    }

    /// Schema check: no unknown arguments, required ones present, types match.
    pub fn check(&self, call: &ToolCall) -> Result<(), String> {
        for (name, value) in &call.arguments {
            let spec = self.arg(name).ok_or_else(|| format!("unknown argument '{name}'"))?;
            if !spec.ty.accepts(value) {
                return Err(format!("argument '{name}' must be {}", spec.ty.as_str()));
            }
        }
        for a in self.arguments.iter().filter(|a| a.required) {
            if !call.arguments.contains_key(a.name) {
                return Err(format!("missing argument '{}'", a.name));
            }
        }
        Ok(())
    }

    /// One-line signature used in prompts and `tools list`.
    pub fn signature(&self) -> String {
        let args: Vec<String> = self
            .arguments
            .iter()
            .chain([&CONFIDENCE_ARG])
            .map(|a| format!("{}{}: {}", a.name, if a.required { "" } else { "?" }, a.ty.as_str()))
            .collect();
        format!("{}({}) -> {}", self.name, args.join(", "), self.produces)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ToolOutcome {
    Tag { tag: FacetTag },
    Rejected { reason: String },
    UnknownTool { name: String },
}

impl ToolOutcome {
    pub fn tag(&self) -> Option<&FacetTag> {
        match self {
            ToolOutcome::Tag { tag } => Some(tag),
            _ => None,
        }
    }

    fn rejected(reason: impl Into<String>) -> Self {
        ToolOutcome::Rejected { reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolResult {
    pub call_index: usize,
    #[serde(flatten)]
    pub outcome: ToolOutcome,
    pub duration_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Registry {
    specs: BTreeMap<&'static str, ToolSpec>,
}

impl Default for Registry {
    fn default() -> Self {
        use ArgType::*;
        let specs = [
            (Facet::Title, vec![req("title", String)]),
            (Facet::Company, vec![req("company", String)]),
            (Facet::GeoLocation, vec![req("place", String), opt("country", String)]),
            (Facet::Seniority, vec![req("level", String)]),
            (Facet::Industry, vec![req("industry", String)]),
            (Facet::EasyApply, vec![req("enabled", Boolean)]),
            (Facet::DatePostedWindow, vec![req("window", StringOrInteger)]),
            (Facet::MaxApplicants, vec![req("max", Integer)]),
            (Facet::JobInNetwork, vec![req("enabled", Boolean)]),
        ];
        Registry {
            specs: specs
                .into_iter()
                .map(|(facet, arguments)| {
                    let name = facet.tool_name();
                    (name, ToolSpec { name, arguments, produces: facet })
                })
                .collect(),
        }
    }
}

impl Registry {
    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.specs.get(name)
    }

    /// Specs sorted by name.
    pub fn specs(&self) -> impl Iterator<Item = &ToolSpec> {
        self.specs.values()
    }

    pub fn catalog(&self) -> String {
        self.specs().map(|s| format!("- {}", s.signature())).collect::<Vec<_>>().join("\n")
    }

    /// Validates and normalizes one call. Never fabricates a tag: any
    /// failure becomes `Rejected`.
    pub fn execute(
        &self,
        call: &ToolCall,
        query_text: Option<&str>,
        profile: Option<&MemberProfile>,
        taxonomy: &Taxonomy,
    ) -> ToolOutcome {
        let Some(spec) = self.get(&call.tool_name) else {
            return ToolOutcome::UnknownTool { name: call.tool_name.clone() };
        };
        if let Err(reason) = spec.check(call) {
            return ToolOutcome::rejected(reason);
        }
        let confidence = match call.arg("confidence") {
            None => 1.0,
            Some(v) => match v.as_f64() {
                Some(c) if (0.0..=1.0).contains(&c) => c,
                _ => return ToolOutcome::rejected("confidence must lie in [0, 1]"),
            },
        };
        let (value, surface) = match normalize_call(spec.produces, call, profile, taxonomy) {
            Ok(v) => v,
            Err(reason) => return ToolOutcome::rejected(reason),
        };
        let mut tag = FacetTag::new(value).with_confidence(confidence);
        if let (Some(q), Some(s)) = (query_text, surface) {
            if let Some(span) = find_span(q, s) {
                tag = tag.with_span(span);
            }
        }
        ToolOutcome::Tag { tag }
    }
}

fn text_arg<'a>(call: &'a ToolCall, name: &str) -> Result<&'a str, String> {
    let s = call.arg_str(name).unwrap_or("").trim();
    if s.is_empty() {
        Err(format!("argument '{name}' is empty"))
    } else {
        Ok(s)
    }
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The normalized payload plus the raw text to locate in the query, if any.
fn normalize_call<'a>(
    facet: Facet,
    call: &'a ToolCall,
    profile: Option<&MemberProfile>,
    taxonomy: &Taxonomy,
) -> Result<(FacetValue, Option<&'a str>), String> {
    let flag = |name| call.arg(name).and_then(Value::as_bool).unwrap_or(false);
    Ok(match facet {
        Facet::Title => {
            let t = text_arg(call, "title")?;
            (FacetValue::Title(collapse(t)), Some(t))
        }
        Facet::Company => {
            let c = text_arg(call, "company")?;
            (FacetValue::Company(collapse(c)), Some(c))
        }
        Facet::GeoLocation => {
            let raw = text_arg(call, "place")?;
            let hint = call.arg_str("country");
            match resolve_location_hinted(raw, hint, profile, taxonomy) {
                LocationResolution::Resolved { place_id } => {
                    let place = taxonomy.place(&place_id).expect("resolved ids come from the taxonomy");
                    let value = FacetValue::GeoLocation(ResolvedPlace { display: place.display(), place_id });
                    (value, Some(raw))
                }
                LocationResolution::Ambiguous { candidates } => {
                    return Err(format!("ambiguous place '{raw}': {}", candidates.join(", ")))
                }
                LocationResolution::NotFound => return Err(format!("unknown place '{raw}'")),
            }
        }
        Facet::Seniority => {
            let raw = text_arg(call, "level")?;
            let s = taxonomy.find_seniority(raw).ok_or_else(|| format!("unknown seniority '{raw}'"))?;
            (FacetValue::Seniority(s.id.clone()), Some(raw))
        }
        Facet::Industry => {
            let raw = text_arg(call, "industry")?;
            let i = taxonomy.find_industry(raw).ok_or_else(|| format!("unknown industry '{raw}'"))?;
            (FacetValue::Industry(i.id.clone()), Some(raw))
        }
        Facet::EasyApply => (FacetValue::EasyApply(flag("enabled")), None),
        Facet::JobInNetwork => (FacetValue::JobInNetwork(flag("enabled")), None),
        Facet::DatePostedWindow => {
            let days = normalize_date_posted(call.arg("window").expect("checked"))?;
            let surface = call.arg_str("window");
            (FacetValue::DatePostedWindow(days), surface)
        }
        Facet::MaxApplicants => {
            (FacetValue::MaxApplicants(normalize_num_applicants(call.arg("max").expect("checked"))?), None)
        }
    })
}

/// Character span of the first ASCII case-insensitive occurrence of `needle`.
pub fn find_span(haystack: &str, needle: &str) -> Option<Span> {
    let h: Vec<char> = haystack.chars().map(|c| c.to_ascii_lowercase()).collect();
    let n: Vec<char> = needle.chars().map(|c| c.to_ascii_lowercase()).collect();
    if n.is_empty() || n.len() > h.len() {
        return None;
    }
    (0..=h.len() - n.len())
        .find(|&i| h[i..i + n.len()] == n[..])
        .map(|start| Span { start, end: start + n.len() })
}

/// Shared read-only registry.
pub fn default_registry() -> Arc<Registry> {
    Arc::new(Registry::default())
}
