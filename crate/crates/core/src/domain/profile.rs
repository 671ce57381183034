use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("profile industry '{0}' is not in the loaded taxonomy")]
    UnknownIndustry(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileLocation {
    pub city: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
}

impl ProfileLocation {
    /// "City, Region", falling back to "City, Country" and then "City".
    pub fn render(&self) -> String {
        match (&self.region, &self.country) {
            (Some(region), _) => format!("{}, {}", self.city, region),
            (None, Some(country)) => format!("{}, {}", self.city, country),
            (None, None) => self.city.clone(),
        }
    }
}

/// Contextual member signals supplied per request.
///
/// All list fields are deduplicated (first occurrence wins) whenever a profile
/// is deserialized or passed through [`MemberProfile::normalized`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "ProfileRepr")]
pub struct MemberProfile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<ProfileLocation>,
    /// Most recent first.
    pub titles: Vec<String>,
    pub skills: Vec<String>,
    /// Taxonomy industry ids.
    pub industries: Vec<String>,
    pub education: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub years_experience: Option<u32>,
    pub network_company_ids: Vec<String>,
}

#[derive(Deserialize)]
struct ProfileRepr {
    #[serde(default)]
    location: Option<ProfileLocation>,
    #[serde(default)]
    titles: Vec<String>,
    #[serde(default)]
    skills: Vec<String>,
    #[serde(default)]
    industries: Vec<String>,
    #[serde(default)]
    education: Vec<String>,
    #[serde(default)]
    years_experience: Option<u32>,
    #[serde(default)]
    network_company_ids: Vec<String>,
}

impl From<ProfileRepr> for MemberProfile {
    fn from(r: ProfileRepr) -> Self {
        MemberProfile {
            location: r.location,
            titles: r.titles,
            skills: r.skills,
            industries: r.industries,
            education: r.education,
            years_experience: r.years_experience,
            network_company_ids: r.network_company_ids,
        }
        .normalized()
    }
}

fn dedup(items: Vec<String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    items.into_iter().filter(|s| seen.insert(s.clone())).collect()
}

impl MemberProfile {
    pub fn normalized(self) -> Self {
        MemberProfile {
            titles: dedup(self.titles),
            skills: dedup(self.skills),
            industries: dedup(self.industries),
            education: dedup(self.education),
            network_company_ids: dedup(self.network_company_ids),
            ..self
        }
    }

    pub fn country(&self) -> Option<&str> {
        self.location.as_ref().and_then(|l| l.country.as_deref())
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), ProfileError> {
        for id in &self.industries {
            if taxonomy.industry(id).is_none() {
                return Err(ProfileError::UnknownIndustry(id.clone()));
            }
        }
        Ok(())
    }
}
