//! Closed vocabularies for industries, seniorities and places.
//!
//! Loaded from a JSON file at startup and read-only afterwards. Lookups are
//! case-insensitive with whitespace collapsed; a single alias may map to
//! several places (the "Naples" case), which callers must disambiguate.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("reading taxonomy file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing taxonomy: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate {kind} id '{id}'")]
    DuplicateId { kind: &'static str, id: String },
    #[error("industry '{industry}' relates to unknown industry '{related}'")]
    UnknownRelated { industry: String, related: String },
    #[error("place '{0}' has no aliases")]
    NoAliases(String),
    #[error("{kind} entry has an empty id")]
    EmptyId { kind: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Industry {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub related: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seniority {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Place {
    pub id: String,
    pub city: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    pub country: String,
    pub aliases: Vec<String>,
}

impl Place {
    pub fn display(&self) -> String {
        match &self.region {
            Some(r) => format!("{}, {}", self.city, r),
            None => format!("{}, {}", self.city, self.country),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaxonomyFile {
    #[serde(default = "default_version")]
    version: String,
    #[serde(default)]
    industries: Vec<Industry>,
    #[serde(default)]
    seniorities: Vec<Seniority>,
    #[serde(default)]
    places: Vec<Place>,
}

fn default_version() -> String {
    "1".to_string()
}

/// Lowercase, trim, collapse inner whitespace.
pub fn lookup_key(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyFile", into = "TaxonomyFile")]
pub struct Taxonomy {
    version: String,
    industries: Vec<Industry>,
    seniorities: Vec<Seniority>,
    places: Vec<Place>,
    industry_ids: HashMap<String, usize>,
    industry_terms: HashMap<String, usize>,
    seniority_terms: HashMap<String, usize>,
    place_ids: HashMap<String, usize>,
    place_aliases: HashMap<String, Vec<usize>>,
}

impl From<Taxonomy> for TaxonomyFile {
    fn from(t: Taxonomy) -> Self {
        TaxonomyFile {
            version: t.version,
            industries: t.industries,
            seniorities: t.seniorities,
            places: t.places,
        }
    }
}

impl TryFrom<TaxonomyFile> for Taxonomy {
    type Error = TaxonomyError;

    fn try_from(f: TaxonomyFile) -> Result<Self, Self::Error> {
        Taxonomy::build(f.version, f.industries, f.seniorities, f.places)
    }
}

impl Taxonomy {
    pub fn build(
        version: impl Into<String>,
        industries: Vec<Industry>,
        seniorities: Vec<Seniority>,
        places: Vec<Place>,
    ) -> Result<Self, TaxonomyError> {
        let mut industry_ids = HashMap::new();
        for (i, ind) in industries.iter().enumerate() {
            if ind.id.is_empty() {
                return Err(TaxonomyError::EmptyId { kind: "industry" });
            }
            if industry_ids.insert(ind.id.clone(), i).is_some() {
                return Err(TaxonomyError::DuplicateId { kind: "industry", id: ind.id.clone() });
            }
        }
        for ind in &industries {
            for rel in &ind.related {
                if !industry_ids.contains_key(rel) {
                    return Err(TaxonomyError::UnknownRelated {
                        industry: ind.id.clone(),
                        related: rel.clone(),
                    });
                }
            }
        }
        // First registration of a term wins, so ids shadow names and aliases
        // of later entries.
        let mut industry_terms = HashMap::new();
        for (i, ind) in industries.iter().enumerate() {
            for term in std::iter::once(&ind.id).chain([&ind.name]).chain(&ind.aliases) {
                industry_terms.entry(lookup_key(term)).or_insert(i);
            }
        }

        let mut seniority_terms = HashMap::new();
        let mut seen = HashSet::new();
        for (i, s) in seniorities.iter().enumerate() {
            if s.id.is_empty() {
                return Err(TaxonomyError::EmptyId { kind: "seniority" });
            }
            if !seen.insert(s.id.clone()) {
                return Err(TaxonomyError::DuplicateId { kind: "seniority", id: s.id.clone() });
            }
            for term in std::iter::once(&s.id).chain([&s.name]).chain(&s.aliases) {
                seniority_terms.entry(lookup_key(term)).or_insert(i);
            }
        }

        let mut place_ids = HashMap::new();
        let mut place_aliases: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, p) in places.iter().enumerate() {
            if p.id.is_empty() {
                return Err(TaxonomyError::EmptyId { kind: "place" });
            }
            if place_ids.insert(p.id.clone(), i).is_some() {
                return Err(TaxonomyError::DuplicateId { kind: "place", id: p.id.clone() });
            }
            if p.aliases.iter().all(|a| a.trim().is_empty()) {
                return Err(TaxonomyError::NoAliases(p.id.clone()));
            }
            for alias in &p.aliases {
                let slot = place_aliases.entry(lookup_key(alias)).or_default();
                if !slot.contains(&i) {
                    slot.push(i);
                }
            }
        }

        Ok(Taxonomy {
            version: version.into(),
            industries,
            seniorities,
            places,
            industry_ids,
            industry_terms,
            seniority_terms,
            place_ids,
            place_aliases,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile = serde_json::from_str(s)?;
        Self::try_from(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn industries(&self) -> &[Industry] {
        &self.industries
    }

    pub fn seniorities(&self) -> &[Seniority] {
        &self.seniorities
    }

    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn industry(&self, id: &str) -> Option<&Industry> {
        self.industry_ids.get(id).map(|&i| &self.industries[i])
    }

    /// Match by id, display name or alias.
    pub fn find_industry(&self, text: &str) -> Option<&Industry> {
        self.industry_terms.get(&lookup_key(text)).map(|&i| &self.industries[i])
    }

    pub fn seniority(&self, id: &str) -> Option<&Seniority> {
        self.seniorities.iter().find(|s| s.id == id)
    }

    pub fn find_seniority(&self, text: &str) -> Option<&Seniority> {
        self.seniority_terms.get(&lookup_key(text)).map(|&i| &self.seniorities[i])
    }

    pub fn place(&self, id: &str) -> Option<&Place> {
        self.place_ids.get(id).map(|&i| &self.places[i])
    }

    /// All places carrying `alias`, in taxonomy order.
    pub fn places_for_alias(&self, alias: &str) -> Vec<&Place> {
        let mut idx = self.place_aliases.get(&lookup_key(alias)).cloned().unwrap_or_default();
        idx.sort_unstable();
        idx.into_iter().map(|i| &self.places[i]).collect()
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ambiguous_alias_is_legal_and_ordered() {
        let t = fixtures::small();
        let ids: Vec<_> = t.places_for_alias("  naples ").iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, vec!["naples-fl-us", "naples-campania-it"]);
        assert!(t.places_for_alias("Atlantis").is_empty());
    }

    #[test]
    fn related_ids_must_close() {
        let err = Taxonomy::from_json_str(
            r#"{"industries":[{"id":"a","name":"A","related":["b"]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, TaxonomyError::UnknownRelated { .. }));
    }

    #[test]
    fn place_needs_alias() {
        let err = Taxonomy::from_json_str(
            r#"{"places":[{"id":"x","city":"X","country":"US","aliases":[" "]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, TaxonomyError::NoAliases(_)));
    }

    #[test]
    fn lookups_are_case_insensitive() {
        let t = fixtures::small();
        assert_eq!(t.find_industry("FINANCIAL technology").unwrap().id, "fintech");
        assert_eq!(t.find_industry("Payment  Processing").unwrap().id, "payments");
        assert_eq!(t.find_seniority("Senior").unwrap().id, "mid_senior");
    }

    #[test]
    fn round_trips_through_json() {
        let t = fixtures::small();
        let json = serde_json::to_string(&t).unwrap();
        let back = Taxonomy::from_json_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }
}
