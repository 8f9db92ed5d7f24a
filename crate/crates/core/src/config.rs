//! Kernel configuration: JSON file loading with defaults, field-level
//! validation, and a normalized dump used for round-tripping.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    ParseError(String),
    #[error("invalid config field '{field}': {reason}")]
    InvalidConfig { field: String, reason: String },
}

fn bad(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidConfig {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Declares a model backend to register at kernel start. The only built-in
/// kind is `scripted`, which replays a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDecl {
    pub id: String,
    #[serde(default = "default_backend_kind")]
    pub kind: String,
    #[serde(default)]
    pub transcript: Option<PathBuf>,
}

fn default_backend_kind() -> String {
    "scripted".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub registry_root: PathBuf,
    pub workspace: PathBuf,
    #[serde(default)]
    pub ltm_path: Option<PathBuf>,
    #[serde(default = "default_summarization_threshold")]
    pub summarization_threshold_tokens: u64,
    #[serde(default = "default_keep_recent")]
    pub keep_recent_events: usize,
    #[serde(default = "default_truncation_limit")]
    pub truncation_limit_bytes: usize,
    #[serde(default = "default_dedup_threshold")]
    pub dedup_threshold: f64,
    #[serde(default)]
    pub backends: Vec<BackendDecl>,
}

fn default_summarization_threshold() -> u64 {
    24_000
}

fn default_keep_recent() -> usize {
    8
}

fn default_truncation_limit() -> usize {
    65_536
}

fn default_dedup_threshold() -> f64 {
    0.9
}

impl KernelConfig {
    pub fn new(registry_root: &Path, workspace: &Path) -> Self {
        Self {
            registry_root: registry_root.to_path_buf(),
            workspace: workspace.to_path_buf(),
            ltm_path: None,
            summarization_threshold_tokens: default_summarization_threshold(),
            keep_recent_events: default_keep_recent(),
            truncation_limit_bytes: default_truncation_limit(),
            dedup_threshold: default_dedup_threshold(),
            backends: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.registry_root.is_dir() {
            return Err(bad(
                "registry_root",
                format!("'{}' is not a directory", self.registry_root.display()),
            ));
        }
        if !self.workspace.is_dir() {
            return Err(bad(
                "workspace",
                format!("'{}' is not a directory", self.workspace.display()),
            ));
        }
        if self.summarization_threshold_tokens == 0 {
            return Err(bad("summarization_threshold_tokens", "must be positive"));
        }
        if self.keep_recent_events == 0 {
            return Err(bad("keep_recent_events", "must be positive"));
        }
        if self.truncation_limit_bytes == 0 {
            return Err(bad("truncation_limit_bytes", "must be positive"));
        }
        if !(self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0) {
            return Err(bad("dedup_threshold", "must be in (0, 1]"));
        }
        for backend in &self.backends {
            if backend.id.is_empty() || backend.id == "inherit" {
                return Err(bad("backends.id", "ids must be nonempty and not 'inherit'"));
            }
            match backend.kind.as_str() {
                "scripted" => {
                    let Some(transcript) = &backend.transcript else {
                        return Err(bad(
                            "backends.transcript",
                            format!("scripted backend '{}' needs a transcript file", backend.id),
                        ));
                    };
                    if !transcript.is_file() {
                        return Err(bad(
                            "backends.transcript",
                            format!("'{}' is not a file", transcript.display()),
                        ));
                    }
                }
                other => {
                    return Err(bad(
                        "backends.kind",
                        format!("unknown backend kind '{other}'"),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Normalized JSON form; `load_config(dump(c))` is byte-stable.
    pub fn dump(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }
}

pub fn parse_config(text: &str) -> Result<KernelConfig, ConfigError> {
    let config: KernelConfig =
        serde_json::from_str(text).map_err(|e| ConfigError::ParseError(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(file: &Path) -> Result<KernelConfig, ConfigError> {
    let text = std::fs::read_to_string(file)
        .map_err(|e| ConfigError::ParseError(format!("{}: {e}", file.display())))?;
    parse_config(&text)
}
