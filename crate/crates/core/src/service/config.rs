//! Layered settings: CLI flags over environment variables over a TOML file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

pub const ENV_CONFIG: &str = "QUERYWISE_CONFIG";
pub const ENV_TAXONOMY: &str = "QUERYWISE_TAXONOMY";
pub const ENV_BACKEND: &str = "QUERYWISE_BACKEND";
pub const ENV_MOCK_SCRIPT: &str = "QUERYWISE_MOCK_SCRIPT";
pub const ENV_TIMEOUT_MS: &str = "QUERYWISE_TIMEOUT_MS";
pub const ENV_BIND: &str = "QUERYWISE_BIND";
pub const ENV_CALL_MODE: &str = "QUERYWISE_CALL_MODE";
pub use crate::gateway::{ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config file {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("environment variable {var}: {message}")]
    Env { var: &'static str, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Live,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mock" => Ok(Self::Mock),
            "live" => Ok(Self::Live),
            other => Err(format!("unknown backend '{other}', expected mock or live")),
        }
    }
}

/// How many backend calls one request makes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CallMode {
    /// One call returns routing, rewrite slots and tags together.
    #[default]
    Combined,
    /// Separate plan, rewrite and tag calls.
    Split,
}

impl FromStr for CallMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "combined" => Ok(Self::Combined),
            "split" => Ok(Self::Split),
            other => Err(format!("unknown call mode '{other}', expected combined or split")),
        }
    }
}

/// One source of settings; unset fields defer to lower layers.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub taxonomy: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub mock_script: Option<PathBuf>,
    pub timeout_ms: Option<u64>,
    pub bind: Option<String>,
    pub call_mode: Option<CallMode>,
    pub degrade: Option<bool>,
    pub max_in_flight: Option<usize>,
    pub latency_capacity: Option<usize>,
    pub top_k: Option<usize>,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub max_connections: Option<usize>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        ConfigLayer { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl ConfigLayer {
    pub fn from_toml_str(s: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&s, path)
    }

    /// Reads the `QUERYWISE_*` variables through `lookup`.
    pub fn from_env(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        fn parse<T: FromStr>(var: &'static str, v: Option<String>) -> Result<Option<T>, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.map(|s| s.parse::<T>().map_err(|e| ConfigError::Env { var, message: e.to_string() })).transpose()
        }
        Ok(ConfigLayer {
            taxonomy: lookup(ENV_TAXONOMY).map(PathBuf::from),
            backend: parse(ENV_BACKEND, lookup(ENV_BACKEND))?,
            mock_script: lookup(ENV_MOCK_SCRIPT).map(PathBuf::from),
            timeout_ms: parse(ENV_TIMEOUT_MS, lookup(ENV_TIMEOUT_MS))?,
            bind: lookup(ENV_BIND),
            call_mode: parse(ENV_CALL_MODE, lookup(ENV_CALL_MODE))?,
            endpoint: lookup(ENV_ENDPOINT),
            api_key: lookup(ENV_API_KEY),
            model: lookup(ENV_MODEL),
            ..Default::default()
        })
    }

    /// `self` wins over `lower` field by field.
    pub fn over(self, lower: ConfigLayer) -> ConfigLayer {
        overlay!(
            self, lower, taxonomy, backend, mock_script, timeout_ms, bind, call_mode, degrade, max_in_flight,
            latency_capacity, top_k, endpoint, api_key, model, max_connections
        )
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    /// `None` selects the bundled sample taxonomy.
    pub taxonomy: Option<PathBuf>,
    pub backend: BackendKind,
    /// `None` selects the bundled sample script.
    pub mock_script: Option<PathBuf>,
    pub timeout_ms: u64,
    pub bind: String,
    pub call_mode: CallMode,
    pub degrade: bool,
    pub max_in_flight: usize,
    pub latency_capacity: usize,
    pub top_k: usize,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: String,
    pub max_connections: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings::from_layer(ConfigLayer::default()).expect("defaults are valid")
    }
}

impl Settings {
    pub fn from_layer(l: ConfigLayer) -> Result<Self, ConfigError> {
        let s = Settings {
            taxonomy: l.taxonomy,
            backend: l.backend.unwrap_or_default(),
            mock_script: l.mock_script,
            timeout_ms: l.timeout_ms.unwrap_or(600),
            bind: l.bind.unwrap_or_else(|| "127.0.0.1:8080".into()),
            call_mode: l.call_mode.unwrap_or_default(),
            degrade: l.degrade.unwrap_or(true),
            max_in_flight: l.max_in_flight.unwrap_or(crate::tools::DEFAULT_MAX_IN_FLIGHT),
            latency_capacity: l.latency_capacity.unwrap_or(super::latency::DEFAULT_CAPACITY),
            top_k: l.top_k.unwrap_or(crate::suggest::DEFAULT_TOP_K),
            endpoint: l.endpoint,
            api_key: l.api_key,
            model: l.model.unwrap_or_default(),
            max_connections: l.max_connections.unwrap_or(64),
        };
        if s.timeout_ms == 0 {
            return Err(ConfigError::Invalid("timeout_ms must be at least 1".into()));
        }
        if s.backend == BackendKind::Live && s.endpoint.is_none() {
            return Err(ConfigError::Invalid(format!("live backend needs an endpoint (set {ENV_ENDPOINT})")));
        }
        Ok(s)
    }

    /// Merges `cli` over the process environment over the config file named
    /// by `config_path` (or `QUERYWISE_CONFIG`).
    pub fn resolve(cli: ConfigLayer, config_path: Option<&Path>) -> Result<Self, ConfigError> {
        Self::resolve_with(cli, config_path, |k| std::env::var(k).ok())
    }

    pub fn resolve_with(
        cli: ConfigLayer,
        config_path: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigError> {
        let path = config_path.map(Path::to_path_buf).or_else(|| env(ENV_CONFIG).map(PathBuf::from));
        let file = match path {
            Some(p) => ConfigLayer::load(&p)?,
            None => ConfigLayer::default(),
        };
        let env = ConfigLayer::from_env(env)?;
        Self::from_layer(cli.over(env).over(file))
    }
}
