//! Argument normalizers shared by the tool executors.

use serde::Serialize;
use serde_json::Value;

use crate::domain::MemberProfile;
use crate::taxonomy::{lookup_key, Place, Taxonomy};

/// Closed alias table for posting-age phrases.
pub const DATE_POSTED_ALIASES: [(&str, u32); 3] =
    [("past 24 hours", 1), ("past week", 7), ("past month", 30)];

/// Window in whole days, from an alias phrase or an integer ≥ 1.
pub fn normalize_date_posted(arg: &Value) -> Result<u32, String> {
    match arg {
        Value::String(s) => {
            let key = lookup_key(s);
            DATE_POSTED_ALIASES
                .iter()
                .find(|(phrase, _)| *phrase == key)
                .map(|&(_, days)| days)
                .ok_or_else(|| format!("unknown date window '{s}'"))
        }
        Value::Number(_) => positive_u32(arg, "date window"),
        _ => Err("date window must be a phrase or an integer".into()),
    }
}

/// "At most N applicants"; N ≥ 1.
pub fn normalize_num_applicants(arg: &Value) -> Result<u32, String> {
    positive_u32(arg, "applicant threshold")
}

fn positive_u32(arg: &Value, what: &str) -> Result<u32, String> {
    let n = arg.as_i64().ok_or_else(|| format!("{what} must be an integer"))?;
    if n < 1 {
        return Err(format!("{what} must be at least 1, got {n}"));
    }
    u32::try_from(n).map_err(|_| format!("{what} {n} is out of range"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LocationResolution {
    Resolved { place_id: String },
    /// Candidate ids in taxonomy order.
    Ambiguous { candidates: Vec<String> },
    NotFound,
}

/// Looks `raw` up among place aliases. Several matches are narrowed to those
/// in the member's country; if that still leaves more than one (or none) the
/// result is ambiguous.
pub fn resolve_location(raw: &str, profile: Option<&MemberProfile>, taxonomy: &Taxonomy) -> LocationResolution {
    resolve_location_hinted(raw, None, profile, taxonomy)
}

/// As [`resolve_location`], but an explicit country hint from the model is
/// tried before the profile country.
pub fn resolve_location_hinted(
    raw: &str,
    country_hint: Option<&str>,
    profile: Option<&MemberProfile>,
    taxonomy: &Taxonomy,
) -> LocationResolution {
    let candidates = taxonomy.places_for_alias(raw);
    match candidates.len() {
        0 => return LocationResolution::NotFound,
        1 => return LocationResolution::Resolved { place_id: candidates[0].id.clone() },
        _ => {}
    }
    for country in [country_hint, profile.and_then(MemberProfile::country)].into_iter().flatten() {
        let narrowed: Vec<&&Place> = candidates
            .iter()
            .filter(|p| p.country.eq_ignore_ascii_case(country.trim()))
            .collect();
        if narrowed.len() == 1 {
            return LocationResolution::Resolved { place_id: narrowed[0].id.clone() };
        }
    }
    LocationResolution::Ambiguous {
        candidates: candidates.iter().map(|p| p.id.clone()).collect(),
    }
}
