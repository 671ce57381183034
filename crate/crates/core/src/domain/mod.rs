//! Shared value types: queries, member profiles, facet tags, tool calls and the
//! understanding result returned to downstream consumers.
//!
//! Every type here is an immutable value with a canonical JSON form; see
//! `docs/schema-v1.md` for the field-level contract.

mod facet;
mod profile;
mod query;
mod result;
mod tool_call;

pub use facet::{Facet, FacetTag, FacetValue, ResolvedPlace, Span, TagError};
pub use profile::{MemberProfile, ProfileError, ProfileLocation};
pub use query::{Query, QueryError, MAX_QUERY_CHARS};
pub use result::{
    validate_result, DenialNotice, FacetSuggestion, IntentRoute, Timings, UnderstandingResult,
    Violation, ViolationCategory, DENIAL_MESSAGE,
};
pub use tool_call::ToolCall;

/// Current version of the canonical serialized schema.
pub const SCHEMA_VERSION: &str = "1";
