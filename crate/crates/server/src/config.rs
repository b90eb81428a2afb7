//! Shared helpers for YAML/JSON configuration documents.

use std::path::Path;

use serde::de::DeserializeOwned;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    /// Malformed document; the message starts with the offending line.
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read configuration: {0}")]
    Io(String),
}

/// Parses YAML (and therefore JSON) into `T`.
pub fn parse_document<T: DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    serde_yaml::from_str(text).map_err(|e| match e.location() {
        Some(loc) => ConfigError::Parse(format!("line {}: {e}", loc.line())),
        None => ConfigError::Parse(e.to_string()),
    })
}

pub fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn default_bind() -> String {
    "127.0.0.1:0".into()
}

pub(crate) fn default_workers() -> usize {
    4
}

pub(crate) fn default_queue() -> usize {
    256
}

pub(crate) fn default_retention() -> u64 {
    7 * 24 * 3600
}
