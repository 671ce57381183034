//! Query understanding for job search.
//!
//! A single chat-completion style model routes each query, emits tool calls
//! that are parsed while the response streams, and the host executes those
//! tools against a taxonomy to produce structured facets. Self-referential
//! queries are rewritten from the member profile, and industry mentions
//! trigger taxonomy-constrained facet suggestions.
//!
//! The crate also carries the offline machinery around the model: multi-task
//! batch scheduling with the SFT loss, and a precision/recall harness.

pub mod domain;
pub mod eval;
pub mod gateway;
pub mod planner;
pub mod rewriter;
pub mod stream_parser;
pub mod service;
pub mod suggest;
pub mod taxonomy;
pub mod tools;
pub mod training;
