use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest accepted query, in Unicode scalar values.
pub const MAX_QUERY_CHARS: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("query text is empty")]
    Empty,
    #[error("query text has {0} characters, limit is {MAX_QUERY_CHARS}")]
    TooLong(usize),
}

/// Raw free-text search input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locale: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub request_id: String,
}

impl Query {
    pub fn new(text: impl Into<String>) -> Result<Self, QueryError> {
        let query = Self {
            text: text.into(),
            locale: None,
            request_id: String::new(),
        };
        query.validate()?;
        Ok(query)
    }

    pub fn with_locale(mut self, locale: impl Into<String>) -> Self {
        self.locale = Some(locale.into());
        self
    }

    pub fn with_request_id(mut self, id: impl Into<String>) -> Self {
        self.request_id = id.into();
        self
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.text.trim().is_empty() {
            return Err(QueryError::Empty);
        }
        let chars = self.char_len();
        if chars > MAX_QUERY_CHARS {
            return Err(QueryError::TooLong(chars));
        }
        Ok(())
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}
