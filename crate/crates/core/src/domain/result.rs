use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::facet::{Facet, FacetTag};

/// Fixed message shown to the user when a query is denied.
pub const DENIAL_MESSAGE: &str =
    "This search query may violate our Professional Community Policies. Edit your search to try again";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentRoute {
    CriteriaSearch,
    SelfReferenceSearch,
    NonJobRelated,
    TrustViolation,
}

impl IntentRoute {
    pub const ALL: [IntentRoute; 4] = [
        IntentRoute::CriteriaSearch,
        IntentRoute::SelfReferenceSearch,
        IntentRoute::NonJobRelated,
        IntentRoute::TrustViolation,
    ];

    /// Higher wins when the backend signals several routes at once.
    pub fn precedence(self) -> u8 {
        match self {
            IntentRoute::TrustViolation => 3,
            IntentRoute::SelfReferenceSearch => 2,
            IntentRoute::CriteriaSearch => 1,
            IntentRoute::NonJobRelated => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IntentRoute::CriteriaSearch => "criteria_search",
            IntentRoute::SelfReferenceSearch => "self_reference_search",
            IntentRoute::NonJobRelated => "non_job_related",
            IntentRoute::TrustViolation => "trust_violation",
        }
    }
}

impl fmt::Display for IntentRoute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCategory {
    Offensive,
    Violent,
    Discriminatory,
    SelfHarm,
    OtherHarmful,
}

impl ViolationCategory {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "offensive" => Some(Self::Offensive),
            "violent" | "violence" => Some(Self::Violent),
            "discriminatory" | "discrimination" => Some(Self::Discriminatory),
            "self_harm" => Some(Self::SelfHarm),
            "other_harmful" | "other" | "harmful" => Some(Self::OtherHarmful),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenialNotice {
    pub message: String,
    pub category: ViolationCategory,
}

impl DenialNotice {
    pub fn new(category: ViolationCategory) -> Self {
        Self {
            message: DENIAL_MESSAGE.to_string(),
            category,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetSuggestion {
    pub facet: Facet,
    /// Taxonomy ids, never empty.
    pub suggested_values: Vec<String>,
    pub trigger: String,
}

/// Per-stage wall time in milliseconds. Stages are sequential and disjoint, so
/// their sum never exceeds `total_ms`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: BTreeMap<String, f64>,
    pub total_ms: f64,
}

impl Timings {
    pub fn stage_sum(&self) -> f64 {
        self.stages.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderstandingResult {
    pub route: IntentRoute,
    pub tags: Vec<FacetTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewritten_query: Option<String>,
    pub facet_suggestions: Vec<FacetSuggestion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denial: Option<DenialNotice>,
    #[serde(default)]
    pub timings: Timings,
    /// Set when the backend failed and the result is a pass-through.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degraded: Option<String>,
}

impl UnderstandingResult {
    pub fn denied(category: ViolationCategory) -> Self {
        Self {
            route: IntentRoute::TrustViolation,
            tags: Vec::new(),
            rewritten_query: None,
            facet_suggestions: Vec::new(),
            denial: Some(DenialNotice::new(category)),
            timings: Timings::default(),
            degraded: None,
        }
    }

    pub fn pass_through(reason: impl Into<String>) -> Self {
        Self {
            route: IntentRoute::CriteriaSearch,
            tags: Vec::new(),
            rewritten_query: None,
            facet_suggestions: Vec::new(),
            denial: None,
            timings: Timings::default(),
            degraded: Some(reason.into()),
        }
    }
}

/// A broken [`UnderstandingResult`] invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DenialIffTrust,
    TrustImpliesEmpty,
    RewriteOnlySelfReference,
    DenialMessageExact,
    InvalidTag { index: usize, reason: String },
}

impl Violation {
    pub fn name(&self) -> &'static str {
        match self {
            Violation::DenialIffTrust => "denial-iff-trust",
            Violation::TrustImpliesEmpty => "trust-implies-empty",
            Violation::RewriteOnlySelfReference => "rewrite-only-self-reference",
            Violation::DenialMessageExact => "denial-message-exact",
            Violation::InvalidTag { .. } => "tag-invariants",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidTag { index, reason } => write!(f, "{} (tag {index}: {reason})", self.name()),
            other => f.write_str(other.name()),
        }
    }
}

/// Returns the result unchanged when every invariant holds, otherwise all
/// violated invariants.
pub fn validate_result(result: UnderstandingResult) -> Result<UnderstandingResult, Vec<Violation>> {
    let mut violations = Vec::new();
    let trust = result.route == IntentRoute::TrustViolation;

    if trust != result.denial.is_some() {
        violations.push(Violation::DenialIffTrust);
    }
    if trust
        && (!result.tags.is_empty()
            || result.rewritten_query.is_some()
            || !result.facet_suggestions.is_empty())
    {
        violations.push(Violation::TrustImpliesEmpty);
    }
    if result.rewritten_query.is_some() && result.route != IntentRoute::SelfReferenceSearch {
        violations.push(Violation::RewriteOnlySelfReference);
    }
    if let Some(denial) = &result.denial {
        if denial.message != DENIAL_MESSAGE {
            violations.push(Violation::DenialMessageExact);
        }
    }
    for (index, tag) in result.tags.iter().enumerate() {
        if let Err(e) = tag.validate(None) {
            violations.push(Violation::InvalidTag {
                index,
                reason: e.to_string(),
            });
        }
    }

    if violations.is_empty() {
        Ok(result)
    } else {
        Err(violations)
    }
}
