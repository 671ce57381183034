//! Configuration, the request pipeline and its HTTP front end.

pub mod config;
pub mod http;
pub mod latency;
pub mod pipeline;

pub use config::{BackendKind, CallMode, ConfigError, ConfigLayer, Settings};
pub use latency::{nearest_rank, LatencyError, LatencyRecorder, MetricsSnapshot, StageStats};
pub use pipeline::{Engine, EngineBuildError, EngineOptions, UnderstandError, UnderstandRequest};
