//! Taxonomy-constrained facet suggestions, triggered by industry tags.

use crate::domain::{Facet, FacetSuggestion, FacetTag, FacetValue, MemberProfile};
use crate::taxonomy::Taxonomy;

pub const DEFAULT_TOP_K: usize = 5;

/// One suggestion per tagged industry listing its related industries.
///
/// Tagged industries are never suggested. Industries in the member profile
/// come first, then the rest in the order of the taxonomy's related list.
/// Each list is capped at `top_k`; an industry with nothing left to suggest
/// yields no suggestion.
pub fn suggest(
    tags: &[FacetTag],
    profile: Option<&MemberProfile>,
    taxonomy: &Taxonomy,
    top_k: usize,
) -> Vec<FacetSuggestion> {
    let tagged: Vec<&str> = tags
        .iter()
        .filter_map(|t| match &t.value {
            FacetValue::Industry(id) => Some(id.as_str()),
            _ => None,
        })
        .collect();
    let preferred = |id: &str| profile.is_some_and(|p| p.industries.iter().any(|x| x == id));

    let mut out = Vec::new();
    let mut seen_triggers: Vec<&str> = Vec::new();
    for &id in &tagged {
        if seen_triggers.contains(&id) {
            continue;
        }
        seen_triggers.push(id);
        let Some(industry) = taxonomy.industry(id) else { continue };
        let mut related: Vec<&str> = Vec::new();
        for r in &industry.related {
            if !tagged.contains(&r.as_str()) && !related.contains(&r.as_str()) && taxonomy.industry(r).is_some() {
                related.push(r);
            }
        }
        // stable: keeps taxonomy order within each group
        related.sort_by_key(|r| !preferred(r));
        related.truncate(top_k);
        if related.is_empty() {
            continue;
        }
        out.push(FacetSuggestion {
            facet: Facet::Industry,
            suggested_values: related.into_iter().map(str::to_string).collect(),
            trigger: format!("industry '{}' mentioned in query", industry.id),
        });
    }
    out
}
