use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The closed set of facets the tagger can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    Title,
    Company,
    GeoLocation,
    Seniority,
    Industry,
    EasyApply,
    DatePostedWindow,
    MaxApplicants,
    JobInNetwork,
}

impl Facet {
    pub const ALL: [Facet; 9] = [
        Facet::Title,
        Facet::Company,
        Facet::GeoLocation,
        Facet::Seniority,
        Facet::Industry,
        Facet::EasyApply,
        Facet::DatePostedWindow,
        Facet::MaxApplicants,
        Facet::JobInNetwork,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Facet::Title => "title",
            Facet::Company => "company",
            Facet::GeoLocation => "geo_location",
            Facet::Seniority => "seniority",
            Facet::Industry => "industry",
            Facet::EasyApply => "easy_apply",
            Facet::DatePostedWindow => "date_posted_window",
            Facet::MaxApplicants => "max_applicants",
            Facet::JobInNetwork => "job_in_network",
        }
    }

    /// Name of the default tool that produces this facet.
    pub fn tool_name(self) -> &'static str {
        match self {
            Facet::Title => "title_tool",
            Facet::Company => "company_tool",
            Facet::GeoLocation => "location_tool",
            Facet::Seniority => "seniority_tool",
            Facet::Industry => "industry_tool",
            Facet::EasyApply => "easy_apply_tool",
            Facet::DatePostedWindow => "date_posted_tool",
            Facet::MaxApplicants => "num_applicants_tool",
            Facet::JobInNetwork => "job_in_network_tool",
        }
    }
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A location resolved against the taxonomy. Raw text never reaches this type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResolvedPlace {
    pub place_id: String,
    pub display: String,
}

/// Facet payload; the variant fixes the payload type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "facet", content = "value", rename_all = "snake_case")]
pub enum FacetValue {
    Title(String),
    Company(String),
    GeoLocation(ResolvedPlace),
    /// Taxonomy seniority id.
    Seniority(String),
    /// Taxonomy industry id.
    Industry(String),
    EasyApply(bool),
    /// Posting age window in whole days.
    DatePostedWindow(u32),
    /// At most this many applicants.
    MaxApplicants(u32),
    JobInNetwork(bool),
}

impl FacetValue {
    pub fn facet(&self) -> Facet {
        match self {
            FacetValue::Title(_) => Facet::Title,
            FacetValue::Company(_) => Facet::Company,
            FacetValue::GeoLocation(_) => Facet::GeoLocation,
            FacetValue::Seniority(_) => Facet::Seniority,
            FacetValue::Industry(_) => Facet::Industry,
            FacetValue::EasyApply(_) => Facet::EasyApply,
            FacetValue::DatePostedWindow(_) => Facet::DatePostedWindow,
            FacetValue::MaxApplicants(_) => Facet::MaxApplicants,
            FacetValue::JobInNetwork(_) => Facet::JobInNetwork,
        }
    }

    /// Comparison key: free-text payloads are case-folded with whitespace
    /// collapsed, places compare by id only.
    pub fn match_key(&self) -> String {
        match self {
            FacetValue::Title(s) | FacetValue::Company(s) => s
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .to_lowercase(),
            FacetValue::GeoLocation(p) => p.place_id.clone(),
            FacetValue::Seniority(id) | FacetValue::Industry(id) => id.clone(),
            FacetValue::EasyApply(b) | FacetValue::JobInNetwork(b) => b.to_string(),
            FacetValue::DatePostedWindow(n) | FacetValue::MaxApplicants(n) => n.to_string(),
        }
    }
}

/// Half-open character range `[start, end)` into the query text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TagError {
    #[error("{facet} must be at least 1, got {value}")]
    BelowOne { facet: Facet, value: u32 },
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("span {start}..{end} outside query of {len} characters")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("{0} payload is empty")]
    EmptyPayload(Facet),
}

fn default_confidence() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetTag {
    #[serde(flatten)]
    pub value: FacetValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

impl FacetTag {
    pub fn new(value: FacetValue) -> Self {
        Self {
            value,
            span: None,
            confidence: default_confidence(),
        }
    }

    pub fn with_span(mut self, span: Span) -> Self {
        self.span = Some(span);
        self
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence;
        self
    }

    pub fn facet(&self) -> Facet {
        self.value.facet()
    }

    /// Checks payload bounds and, when the query length is known, the span.
    pub fn validate(&self, query_chars: Option<usize>) -> Result<(), TagError> {
        match &self.value {
            FacetValue::DatePostedWindow(n) | FacetValue::MaxApplicants(n) if *n < 1 => {
                return Err(TagError::BelowOne {
                    facet: self.facet(),
                    value: *n,
                })
            }
            FacetValue::Title(s)
            | FacetValue::Company(s)
            | FacetValue::Seniority(s)
            | FacetValue::Industry(s)
                if s.trim().is_empty() =>
            {
                return Err(TagError::EmptyPayload(self.facet()))
            }
            FacetValue::GeoLocation(p) if p.place_id.is_empty() => {
                return Err(TagError::EmptyPayload(Facet::GeoLocation))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(TagError::Confidence(self.confidence));
        }
        if let (Some(span), Some(len)) = (self.span, query_chars) {
            if span.start > span.end || span.end > len {
                return Err(TagError::SpanOutOfBounds {
                    start: span.start,
                    end: span.end,
                    len,
                });
            }
        }
        Ok(())
    }
}
