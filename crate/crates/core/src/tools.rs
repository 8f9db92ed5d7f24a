//! File-system-backed hierarchical tool registry: lazy discovery, keyword
//! search, and meta-operations that let agents author, validate, and register
//! new tools at runtime.
//!
//! Layout on disk: `<root>/<category>/.../<tool>/tool.json` plus the
//! entrypoint file beside it; every category directory carries an `INDEX.md`
//! whose first line is the category summary.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::ToolSummary;
use crate::sandbox::{
    EnvSpec, ExecLimits, ExecMode, ExecOutcome, InvocationHandle, SandboxError, SandboxId,
    SandboxRuntime,
};

pub const MANIFEST_FILE: &str = "tool.json";
pub const INDEX_FILE: &str = "INDEX.md";
pub const ENV_FILE: &str = "env.json";

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("malformed registry at '{path}': {reason}")]
    MalformedRegistry { path: String, reason: String },
    #[error("unknown tool category '{0}'")]
    UnknownCategory(String),
    #[error("unknown tool '{0}'")]
    UnknownTool(String),
    #[error("invalid manifest field '{field}': {reason}")]
    InvalidManifest { field: String, reason: String },
    #[error("tool '{0}' already exists in this category")]
    DuplicateTool(String),
    #[error("tool '{0}' is not in the caller's tool scope")]
    OutOfScope(String),
    #[error("invalid argument '{param}': {reason}")]
    ArgValidation { param: String, reason: String },
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("registry io error: {0}")]
    Io(String),
}

fn invalid(field: &str, reason: impl Into<String>) -> ToolError {
    ToolError::InvalidManifest {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn io_err(e: std::io::Error) -> ToolError {
    ToolError::Io(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    List,
    Document,
}

impl ParamType {
    fn accepts(self, value: &Value) -> bool {
        match self {
            ParamType::String => value.is_string(),
            ParamType::Integer => value.as_i64().is_some() || value.as_u64().is_some(),
            ParamType::Number => value.is_number(),
            ParamType::Boolean => value.is_boolean(),
            ParamType::List => value.is_array(),
            ParamType::Document => value.is_object(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub param_name: String,
    pub param_type: ParamType,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

impl ParamSpec {
    pub fn required(name: &str, param_type: ParamType, description: &str) -> Self {
        Self {
            param_name: name.to_string(),
            param_type,
            required: true,
            description: description.to_string(),
        }
    }

    pub fn optional(name: &str, param_type: ParamType, description: &str) -> Self {
        Self {
            param_name: name.to_string(),
            param_type,
            required: false,
            description: description.to_string(),
        }
    }
}

/// Declarative description of one tool; the unit of registry validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolManifest {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub interface: Vec<ParamSpec>,
    #[serde(default)]
    pub dependencies: Vec<String>,
    #[serde(default)]
    pub environment: Option<String>,
    pub entrypoint: String,
    pub timeout_seconds: f64,
    #[serde(default)]
    pub background_default: bool,
}

impl ToolManifest {
    /// Structural validation shared by create/modify/describe.
    fn validate_fields(&self) -> Result<(), ToolError> {
        if self.name.is_empty() || !is_safe_component(&self.name) {
            return Err(invalid("name", "must be a nonempty path-safe identifier"));
        }
        if self.entrypoint.is_empty() || !is_safe_component(&self.entrypoint) {
            return Err(invalid(
                "entrypoint",
                "must be a single file name beside the manifest",
            ));
        }
        if self.entrypoint == MANIFEST_FILE || self.entrypoint == INDEX_FILE {
            return Err(invalid("entrypoint", "reserved file name"));
        }
        if self.timeout_seconds.is_nan() || self.timeout_seconds <= 0.0 {
            return Err(invalid("timeout_seconds", "must be positive"));
        }
        let mut seen = std::collections::HashSet::new();
        for param in &self.interface {
            if param.param_name.is_empty() {
                return Err(invalid("interface", "parameter with empty name"));
            }
            if !seen.insert(param.param_name.as_str()) {
                return Err(ToolError::InvalidManifest {
                    field: format!("interface.{}", param.param_name),
                    reason: "duplicate parameter name".into(),
                });
            }
        }
        Ok(())
    }

    pub fn summary(&self, id: &ToolId) -> ToolSummary {
        ToolSummary {
            name: self.name.clone(),
            description: format!("{} [{}]", self.description, id.0),
            parameters: serde_json::to_value(&self.interface).unwrap_or(Value::Null),
        }
    }

    /// Validate an args document against the declared interface.
    pub fn validate_args(&self, args: &Value) -> Result<(), ToolError> {
        let empty = serde_json::Map::new();
        let args = match args {
            Value::Null => &empty,
            Value::Object(map) => map,
            _ => {
                return Err(ToolError::ArgValidation {
                    param: "<args>".into(),
                    reason: "args must be a key/value document".into(),
                })
            }
        };
        for param in &self.interface {
            match args.get(&param.param_name) {
                None if param.required => {
                    return Err(ToolError::ArgValidation {
                        param: param.param_name.clone(),
                        reason: "required parameter is missing".into(),
                    })
                }
                Some(value) if !param.param_type.accepts(value) => {
                    return Err(ToolError::ArgValidation {
                        param: param.param_name.clone(),
                        reason: format!(
                            "expected {:?}, got {}",
                            param.param_type,
                            type_name(value)
                        ),
                    })
                }
                _ => {}
            }
        }
        for key in args.keys() {
            if !self.interface.iter().any(|p| &p.param_name == key) {
                return Err(ToolError::ArgValidation {
                    param: key.clone(),
                    reason: "unknown parameter".into(),
                });
            }
        }
        Ok(())
    }
}

fn type_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "list",
        Value::Object(_) => "document",
    }
}

/// Registry path of a tool's directory, e.g. `dynamic/debugger/set_breakpoint`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ToolId(pub String);

impl std::fmt::Display for ToolId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryIndex {
    pub path: String,
    pub summary: String,
    #[serde(default)]
    pub child_categories: Vec<String>,
    #[serde(default)]
    pub tool_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryExpansion {
    pub child_categories: Vec<CategoryIndex>,
    pub tool_summaries: Vec<ToolBrief>,
}

/// Lightweight (name, description) pair; the manifest is not fully parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolBrief {
    pub name: String,
    pub description: String,
}

/// Result of a synchronous tool invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub exit_status: i32,
    pub output: String,
    pub truncated: bool,
    /// Full bytes when `output` was truncated; recorded into short-term
    /// memory as a raw attachment by the runtime.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<Vec<u8>>,
}

impl ToolResult {
    pub fn from_exec(result: &crate::sandbox::ExecResult, limit_bytes: usize) -> Self {
        let mut combined = result.stdout.clone();
        combined.push_str(&result.stderr);
        let bytes = combined.as_bytes();
        if bytes.len() <= limit_bytes {
            return Self {
                exit_status: result.exit_status,
                output: combined,
                truncated: false,
                raw_output: None,
            };
        }
        let mut cut = limit_bytes;
        while cut > 0 && !combined.is_char_boundary(cut) {
            cut -= 1;
        }
        Self {
            exit_status: result.exit_status,
            output: combined[..cut].to_string(),
            truncated: true,
            raw_output: Some(bytes.to_vec()),
        }
    }
}

#[derive(Debug)]
pub enum ToolInvocation {
    Completed(ToolResult),
    Background(InvocationHandle),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvokeMode {
    Sync,
    Background,
}

/// One entry of an agent's frozen tool scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScopeEntry {
    Builtin { summary: ToolSummary },
    Registry { id: ToolId, summary: ToolSummary },
}

impl ScopeEntry {
    pub fn name(&self) -> &str {
        match self {
            ScopeEntry::Builtin { summary } => &summary.name,
            ScopeEntry::Registry { summary, .. } => &summary.name,
        }
    }

    pub fn summary(&self) -> &ToolSummary {
        match self {
            ScopeEntry::Builtin { summary } => summary,
            ScopeEntry::Registry { summary, .. } => summary,
        }
    }
}

/// An agent's resolved tool scope. Frozen at agent creation; grows only when
/// the agent itself registers a new tool.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolScope {
    pub entries: Vec<ScopeEntry>,
}

impl ToolScope {
    pub fn summaries(&self) -> Vec<ToolSummary> {
        self.entries.iter().map(|e| e.summary().clone()).collect()
    }

    pub fn contains_tool(&self, id: &ToolId) -> bool {
        self.entries
            .iter()
            .any(|e| matches!(e, ScopeEntry::Registry { id: have, .. } if have == id))
    }

    pub fn contains_builtin(&self, name: &str) -> bool {
        self.entries
            .iter()
            .any(|e| matches!(e, ScopeEntry::Builtin { summary } if summary.name == name))
    }

    /// Resolve a model-facing tool name. Builtins shadow registry tools.
    pub fn resolve_name(&self, name: &str) -> Option<&ScopeEntry> {
        self.entries
            .iter()
            .find(|e| matches!(e, ScopeEntry::Builtin { .. }) && e.name() == name)
            .or_else(|| self.entries.iter().find(|e| e.name() == name))
    }

    pub fn push_registry(&mut self, id: ToolId, summary: ToolSummary) {
        self.entries.push(ScopeEntry::Registry { id, summary });
    }
}

/// The registry root. Reads are concurrent; mutations serialize on one lock.
pub struct ToolRegistry {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl ToolRegistry {
    pub fn open(root: &Path) -> Result<Self, ToolError> {
        if !root.is_dir() {
            return Err(ToolError::MalformedRegistry {
                path: root.display().to_string(),
                reason: "registry root is not a directory".into(),
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            write_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn abs(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn is_tool_dir(path: &Path) -> bool {
        path.join(MANIFEST_FILE).is_file()
    }

    fn read_summary(&self, dir: &Path, rel: &str) -> Result<String, ToolError> {
        let index = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&index).map_err(|_| ToolError::MalformedRegistry {
            path: rel.to_string(),
            reason: format!("missing directory summary ({INDEX_FILE})"),
        })?;
        Ok(text.lines().next().unwrap_or("").trim().to_string())
    }

    fn sorted_subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>, ToolError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(dir).map_err(io_err)? {
            let entry = entry.map_err(io_err)?;
            if entry.file_type().map_err(io_err)?.is_dir() {
                out.push((
                    entry.file_name().to_string_lossy().into_owned(),
                    entry.path(),
                ));
            }
        }
        out.sort();
        Ok(out)
    }

    /// Top-level categories only. Nothing below depth one is read beyond the
    /// category's own `INDEX.md` — tool manifests stay unparsed.
    pub fn load_root_index(&self) -> Result<Vec<CategoryIndex>, ToolError> {
        let mut categories = Vec::new();
        for (name, path) in Self::sorted_subdirs(&self.root)? {
            if Self::is_tool_dir(&path) {
                return Err(ToolError::MalformedRegistry {
                    path: name,
                    reason: "tools must live inside a category".into(),
                });
            }
            let summary = self.read_summary(&path, &name)?;
            categories.push(CategoryIndex {
                path: name,
                summary,
                child_categories: Vec::new(),
                tool_names: Vec::new(),
            });
        }
        Ok(categories)
    }

    /// Expand exactly one directory level below `path`.
    pub fn expand_category(&self, path: &str) -> Result<CategoryExpansion, ToolError> {
        validate_rel_path(path)?;
        let dir = self.abs(path);
        if !dir.is_dir() || Self::is_tool_dir(&dir) {
            return Err(ToolError::UnknownCategory(path.to_string()));
        }
        let mut child_categories = Vec::new();
        let mut tool_summaries = Vec::new();
        for (name, child) in Self::sorted_subdirs(&dir)? {
            let rel = format!("{path}/{name}");
            if Self::is_tool_dir(&child) {
                tool_summaries.push(self.read_brief(&child, &rel)?);
            } else {
                child_categories.push(CategoryIndex {
                    path: rel.clone(),
                    summary: self.read_summary(&child, &rel)?,
                    child_categories: Vec::new(),
                    tool_names: Vec::new(),
                });
            }
        }
        Ok(CategoryExpansion {
            child_categories,
            tool_summaries,
        })
    }

    /// Name and description only; the manifest is not validated here.
    fn read_brief(&self, tool_dir: &Path, rel: &str) -> Result<ToolBrief, ToolError> {
        let text = fs::read_to_string(tool_dir.join(MANIFEST_FILE)).map_err(io_err)?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ToolError::MalformedRegistry {
                path: rel.to_string(),
                reason: format!("unreadable manifest: {e}"),
            })?;
        Ok(ToolBrief {
            name: value
                .get("name")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string(),
            description: value
                .get("description")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string(),
        })
    }

    fn walk_tools(
        &self,
        dir: &Path,
        rel: &str,
        summaries: &mut Vec<String>,
        out: &mut Vec<(ToolId, ToolBrief, Vec<String>)>,
    ) {
        let Ok(children) = Self::sorted_subdirs(dir) else {
            return;
        };
        for (name, child) in children {
            let child_rel = if rel.is_empty() {
                name.clone()
            } else {
                format!("{rel}/{name}")
            };
            if Self::is_tool_dir(&child) {
                if let Ok(brief) = self.read_brief(&child, &child_rel) {
                    out.push((ToolId(child_rel), brief, summaries.clone()));
                }
            } else {
                let summary = self.read_summary(&child, &child_rel).unwrap_or_default();
                summaries.push(summary);
                self.walk_tools(&child, &child_rel, summaries, out);
                summaries.pop();
            }
        }
    }

    /// Case-insensitive substring search over tool names, descriptions, and
    /// ancestor category summaries. Results sorted by registry path.
    pub fn search_tools(&self, keyword: &str) -> Vec<(ToolId, String)> {
        let needle = keyword.to_lowercase();
        let mut all = Vec::new();
        self.walk_tools(&self.root, "", &mut Vec::new(), &mut all);
        let mut hits: Vec<(ToolId, String)> = all
            .into_iter()
            .filter(|(_, brief, ancestors)| {
                needle.is_empty()
                    || brief.name.to_lowercase().contains(&needle)
                    || brief.description.to_lowercase().contains(&needle)
                    || ancestors.iter().any(|s| s.to_lowercase().contains(&needle))
            })
            .map(|(id, brief, _)| (id, brief.description))
            .collect();
        hits.sort_by(|a, b| a.0.cmp(&b.0));
        hits
    }

    /// Fully parsed, validated manifest.
    pub fn describe_tool(&self, id: &ToolId) -> Result<ToolManifest, ToolError> {
        validate_rel_path(&id.0)?;
        let dir = self.abs(&id.0);
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Err(ToolError::UnknownTool(id.0.clone()));
        }
        let text = fs::read_to_string(&manifest_path).map_err(io_err)?;
        let manifest: ToolManifest = serde_json::from_str(&text)
            .map_err(|e| invalid("<manifest>", format!("parse failure: {e}")))?;
        manifest.validate_fields()?;
        let dir_name = id.0.rsplit('/').next().unwrap_or_default();
        if manifest.name != dir_name {
            return Err(invalid(
                "name",
                format!(
                    "'{}' does not match its directory '{dir_name}'",
                    manifest.name
                ),
            ));
        }
        if !dir.join(&manifest.entrypoint).is_file() {
            return Err(invalid(
                "entrypoint",
                format!(
                    "'{}' does not exist beside the manifest",
                    manifest.entrypoint
                ),
            ));
        }
        Ok(manifest)
    }

    pub fn entrypoint_path(&self, id: &ToolId, manifest: &ToolManifest) -> PathBuf {
        self.abs(&id.0).join(&manifest.entrypoint)
    }

    /// Validate, then persist implementation + manifest and update the
    /// category summary. Nothing is written when validation fails.
    pub fn create_tool(
        &self,
        _author: &str,
        target_category: &str,
        manifest: &ToolManifest,
        implementation: &str,
    ) -> Result<ToolId, ToolError> {
        let _guard = self.write_lock.lock().unwrap();
        validate_rel_path(target_category)?;
        let category_dir = self.abs(target_category);
        if !category_dir.is_dir() || Self::is_tool_dir(&category_dir) {
            return Err(ToolError::UnknownCategory(target_category.to_string()));
        }
        manifest.validate_fields()?;

        let tool_dir = category_dir.join(&manifest.name);
        if tool_dir.exists() {
            return Err(ToolError::DuplicateTool(manifest.name.clone()));
        }

        // All validation passed; now write.
        fs::create_dir_all(&tool_dir).map_err(io_err)?;
        fs::write(tool_dir.join(&manifest.entrypoint), implementation).map_err(io_err)?;
        fs::write(
            tool_dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(manifest).map_err(|e| ToolError::Io(e.to_string()))?,
        )
        .map_err(io_err)?;

        let index_path = category_dir.join(INDEX_FILE);
        let mut index = fs::read_to_string(&index_path).unwrap_or_default();
        if !index.ends_with('\n') && !index.is_empty() {
            index.push('\n');
        }
        index.push_str(&format!("- {}: {}\n", manifest.name, manifest.description));
        fs::write(&index_path, index).map_err(io_err)?;

        Ok(ToolId(format!("{target_category}/{}", manifest.name)))
    }

    /// Atomic replacement of manifest and/or implementation; the prior
    /// version stays beside the manifest as a numbered backup.
    pub fn modify_tool(
        &self,
        _author: &str,
        id: &ToolId,
        new_manifest: Option<&ToolManifest>,
        new_implementation: Option<&str>,
    ) -> Result<(), ToolError> {
        let _guard = self.write_lock.lock().unwrap();
        let current = self.describe_tool(id)?;
        if new_manifest.is_none() && new_implementation.is_none() {
            return Err(invalid("<request>", "nothing to modify"));
        }
        let next = new_manifest.unwrap_or(&current);
        next.validate_fields()?;
        if next.name != current.name {
            return Err(invalid("name", "renaming a tool is not supported"));
        }
        if next.entrypoint != current.entrypoint && new_implementation.is_none() {
            return Err(invalid(
                "entrypoint",
                "changed entrypoint requires a new implementation",
            ));
        }

        let dir = self.abs(&id.0);
        let version = next_backup_version(&dir)?;

        if let Some(manifest) = new_manifest {
            backup(&dir, MANIFEST_FILE, version)?;
            fs::write(
                dir.join(MANIFEST_FILE),
                serde_json::to_string_pretty(manifest).map_err(|e| ToolError::Io(e.to_string()))?,
            )
            .map_err(io_err)?;
        }
        if let Some(implementation) = new_implementation {
            if dir.join(&current.entrypoint).is_file() {
                backup(&dir, &current.entrypoint, version)?;
            }
            if next.entrypoint != current.entrypoint {
                fs::remove_file(dir.join(&current.entrypoint)).map_err(io_err)?;
            }
            fs::write(dir.join(&next.entrypoint), implementation).map_err(io_err)?;
        }
        Ok(())
    }

    /// Validate scope and args, then execute inside the given sandbox.
    /// Sync calls that exceed the manifest timeout come back as handles.
    #[allow(clippy::too_many_arguments)]
    pub fn invoke_tool(
        &self,
        caller_scope: &ToolScope,
        id: &ToolId,
        args: &Value,
        mode: InvokeMode,
        runtime: &SandboxRuntime,
        sandbox: &SandboxId,
        truncation_limit: usize,
    ) -> Result<ToolInvocation, ToolError> {
        if !caller_scope.contains_tool(id) {
            return Err(ToolError::OutOfScope(id.0.clone()));
        }
        let manifest = self.describe_tool(id)?;
        manifest.validate_args(args)?;

        let args_json = serde_json::to_string(args).map_err(|e| ToolError::Io(e.to_string()))?;
        let entrypoint = self.entrypoint_path(id, &manifest);
        let command = runtime.tool_command(&entrypoint.to_string_lossy(), &args_json);
        let exec_mode = if mode == InvokeMode::Background || manifest.background_default {
            ExecMode::Background
        } else {
            ExecMode::Sync
        };
        let outcome = runtime.exec(
            sandbox,
            &command,
            ExecLimits {
                timeout_seconds: manifest.timeout_seconds,
            },
            exec_mode,
        )?;
        Ok(match outcome {
            ExecOutcome::Completed(result) => {
                ToolInvocation::Completed(ToolResult::from_exec(&result, truncation_limit))
            }
            ExecOutcome::Offloaded(handle) => ToolInvocation::Background(handle),
        })
    }

    /// Environment specs declared by categories (`env.json` files).
    pub fn collect_env_specs(&self) -> Result<Vec<EnvSpec>, ToolError> {
        fn visit(dir: &Path, out: &mut Vec<EnvSpec>) -> Result<(), ToolError> {
            let env_path = dir.join(ENV_FILE);
            if env_path.is_file() {
                let text = fs::read_to_string(&env_path).map_err(io_err)?;
                let spec: EnvSpec =
                    serde_json::from_str(&text).map_err(|e| ToolError::MalformedRegistry {
                        path: env_path.display().to_string(),
                        reason: format!("unreadable env spec: {e}"),
                    })?;
                out.push(spec);
            }
            for (_, child) in ToolRegistry::sorted_subdirs(dir)? {
                if !ToolRegistry::is_tool_dir(&child) {
                    visit(&child, out)?;
                }
            }
            Ok(())
        }
        let mut out = Vec::new();
        visit(&self.root, &mut out)?;
        Ok(out)
    }
}

fn is_safe_component(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && !name.contains('/')
        && !name.contains('\\')
        && !name.contains(char::is_whitespace)
}

fn validate_rel_path(path: &str) -> Result<(), ToolError> {
    if path.is_empty() || !path.split('/').all(is_safe_component) {
        return Err(ToolError::MalformedRegistry {
            path: path.to_string(),
            reason: "registry paths must be relative, slash-separated identifiers".into(),
        });
    }
    Ok(())
}

fn next_backup_version(dir: &Path) -> Result<u32, ToolError> {
    let mut max = 0u32;
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some((_, suffix)) = name.rsplit_once(".v") {
            if let Ok(n) = suffix.parse::<u32>() {
                max = max.max(n);
            }
        }
    }
    Ok(max + 1)
}

fn backup(dir: &Path, file: &str, version: u32) -> Result<(), ToolError> {
    fs::copy(dir.join(file), dir.join(format!("{file}.v{version}"))).map_err(io_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::LocalDriver;
    use crate::testkit;
    use std::sync::Arc;

    struct Fixture {
        registry: ToolRegistry,
        runtime: SandboxRuntime,
        _dir: tempfile::TempDir,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("registry");
        testkit::install_security_toolkit(&root).unwrap();
        let driver = Arc::new(
            LocalDriver::new(&dir.path().join("sandboxes"), &dir.path().join("workspace")).unwrap(),
        );
        Fixture {
            registry: ToolRegistry::open(&root).unwrap(),
            runtime: SandboxRuntime::new(driver),
            _dir: dir,
        }
    }

    fn echo_manifest(name: &str) -> ToolManifest {
        ToolManifest {
            name: name.to_string(),
            description: format!("Echo tool {name}"),
            interface: vec![ParamSpec::required(
                "value",
                ParamType::String,
                "value to reflect",
            )],
            dependencies: vec![],
            environment: None,
            entrypoint: "run.cmd".to_string(),
            timeout_seconds: 30.0,
            background_default: false,
        }
    }

    #[test]
    fn root_index_lists_top_level_without_touching_manifests() {
        let f = fixture();
        // Corrupt a deep manifest: lazy loading must not notice.
        std::fs::write(
            f.registry
                .root()
                .join("dynamic/debugger/set_file/tool.json"),
            "{not json",
        )
        .unwrap();

        let index = f.registry.load_root_index().unwrap();
        let names: Vec<&str> = index.iter().map(|c| c.path.as_str()).collect();
        assert_eq!(names, vec!["dynamic", "static"]);
        assert!(index.iter().all(|c| !c.summary.is_empty()));
    }

    #[test]
    fn empty_root_is_an_empty_index() {
        let dir = tempfile::tempdir().unwrap();
        let registry = ToolRegistry::open(dir.path()).unwrap();
        assert!(registry.load_root_index().unwrap().is_empty());
    }

    #[test]
    fn summaryless_category_is_malformed_and_names_the_path() {
        let f = fixture();
        std::fs::create_dir_all(f.registry.root().join("orphan")).unwrap();
        match f.registry.load_root_index() {
            Err(ToolError::MalformedRegistry { path, .. }) => assert_eq!(path, "orphan"),
            other => panic!("expected MalformedRegistry, got {other:?}"),
        }
    }

    #[test]
    fn expand_walks_one_level() {
        let f = fixture();
        let dynamic = f.registry.expand_category("dynamic").unwrap();
        let children: Vec<&str> = dynamic
            .child_categories
            .iter()
            .map(|c| c.path.as_str())
            .collect();
        assert_eq!(
            children,
            vec!["dynamic/coverage", "dynamic/debugger", "dynamic/fuzzing"]
        );
        assert!(dynamic.tool_summaries.is_empty());

        let fuzzing = f.registry.expand_category("dynamic/fuzzing").unwrap();
        assert_eq!(fuzzing.tool_summaries.len(), 3);
        assert!(fuzzing.child_categories.is_empty());

        assert!(matches!(
            f.registry.expand_category("dynamic/none"),
            Err(ToolError::UnknownCategory(_))
        ));
    }

    #[test]
    fn search_matches_descriptions_and_is_sorted() {
        let f = fixture();
        let hits = f.registry.search_tools("breakpoint");
        assert!(!hits.is_empty());
        assert!(hits
            .iter()
            .any(|(id, desc)| id.0 == "dynamic/debugger/set_breakpoint"
                && desc.contains("Set breakpoints")));

        let all = f.registry.search_tools("");
        assert!(all.len() >= 10);
        let mut sorted = all.clone();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(all, sorted);

        assert!(f.registry.search_tools("zzzz-no-hit").is_empty());
    }

    #[test]
    fn search_narrows_monotonically() {
        let f = fixture();
        // Every extension of a keyword can only narrow the result set.
        let chain = ["", "b", "br", "brea", "break", "breakp", "breakpoint"];
        for pair in chain.windows(2) {
            let broad = f.registry.search_tools(pair[0]);
            let narrow = f.registry.search_tools(pair[1]);
            for hit in &narrow {
                assert!(
                    broad.iter().any(|b| b.0 == hit.0),
                    "'{}' lost hit {} present under '{}'",
                    pair[1],
                    hit.0,
                    pair[0]
                );
            }
        }
    }

    #[test]
    fn describe_round_trips_and_validates() {
        let f = fixture();
        let id = ToolId("dynamic/debugger/set_breakpoint".into());
        let manifest = f.registry.describe_tool(&id).unwrap();
        assert_eq!(manifest.name, "set_breakpoint");
        assert!(manifest.timeout_seconds > 0.0);

        // Missing entrypoint file.
        let dir = f.registry.root().join("dynamic/debugger/set_breakpoint");
        std::fs::rename(dir.join("run.cmd"), dir.join("run.cmd.away")).unwrap();
        match f.registry.describe_tool(&id) {
            Err(ToolError::InvalidManifest { field, .. }) => assert_eq!(field, "entrypoint"),
            other => panic!("expected entrypoint diagnostic, got {other:?}"),
        }
        std::fs::rename(dir.join("run.cmd.away"), dir.join("run.cmd")).unwrap();

        // Duplicate parameter names.
        let mut bad = echo_manifest("dup_param");
        bad.interface.push(bad.interface[0].clone());
        let written = serde_json::to_string(&bad).unwrap();
        let bad_dir = f.registry.root().join("static/dup_param");
        std::fs::create_dir_all(&bad_dir).unwrap();
        std::fs::write(bad_dir.join("tool.json"), written).unwrap();
        std::fs::write(bad_dir.join("run.cmd"), "true").unwrap();
        match f.registry.describe_tool(&ToolId("static/dup_param".into())) {
            Err(ToolError::InvalidManifest { field, .. }) => {
                assert_eq!(field, "interface.value");
            }
            other => panic!("expected duplicate-param diagnostic, got {other:?}"),
        }
    }

    #[test]
    fn create_tool_is_searchable_describable_invocable() {
        let f = fixture();
        let manifest = echo_manifest("mutate_headers");
        let id = f
            .registry
            .create_tool(
                "agent-1",
                "dynamic/fuzzing",
                &manifest,
                "echo mutated {value}\n",
            )
            .unwrap();

        let hits = f.registry.search_tools("mutate_headers");
        assert!(hits.iter().any(|(hit, _)| hit == &id));

        let described = f.registry.describe_tool(&id).unwrap();
        assert_eq!(described, manifest);

        let mut scope = ToolScope::default();
        scope.push_registry(id.clone(), described.summary(&id));
        let sandbox = f.runtime.provision(&EnvSpec::bare("t")).unwrap();
        let outcome = f
            .registry
            .invoke_tool(
                &scope,
                &id,
                &serde_json::json!({"value": "poc-42"}),
                InvokeMode::Sync,
                &f.runtime,
                &sandbox,
                65536,
            )
            .unwrap();
        match outcome {
            ToolInvocation::Completed(result) => {
                assert_eq!(result.exit_status, 0);
                assert!(result.output.contains("mutated poc-42"));
            }
            ToolInvocation::Background(_) => panic!("expected sync completion"),
        }

        // Category summary mentions the new tool.
        let index =
            std::fs::read_to_string(f.registry.root().join("dynamic/fuzzing/INDEX.md")).unwrap();
        assert!(index.contains("mutate_headers"));
    }

    #[test]
    fn failed_create_leaves_registry_byte_identical() {
        let f = fixture();
        let before = testkit::dir_digest(f.registry.root());

        let mut bad = echo_manifest("broken");
        bad.timeout_seconds = 0.0;
        match f.registry.create_tool("a", "dynamic/fuzzing", &bad, "true") {
            Err(ToolError::InvalidManifest { field, .. }) => {
                assert_eq!(field, "timeout_seconds")
            }
            other => panic!("expected InvalidManifest, got {other:?}"),
        }
        assert_eq!(before, testkit::dir_digest(f.registry.root()));

        assert!(matches!(
            f.registry.create_tool(
                "a",
                "dynamic/debugger",
                &{
                    let mut m = echo_manifest("set_breakpoint");
                    m.entrypoint = "run2.cmd".into();
                    m
                },
                "true"
            ),
            Err(ToolError::DuplicateTool(_))
        ));
        assert_eq!(before, testkit::dir_digest(f.registry.root()));
    }

    #[test]
    fn modify_description_keeps_entrypoint_bytes() {
        let f = fixture();
        let id = ToolId("dynamic/fuzzing/seed_gen".into());
        let entry_path = f.registry.root().join("dynamic/fuzzing/seed_gen/run.cmd");
        let bytes_before = std::fs::read(&entry_path).unwrap();

        let mut updated = f.registry.describe_tool(&id).unwrap();
        updated.description = "Generate richer seed corpora.".into();
        f.registry
            .modify_tool("a", &id, Some(&updated), None)
            .unwrap();

        assert_eq!(
            f.registry.describe_tool(&id).unwrap().description,
            "Generate richer seed corpora."
        );
        assert_eq!(std::fs::read(&entry_path).unwrap(), bytes_before);
    }

    #[test]
    fn invalid_modify_applies_nothing() {
        let f = fixture();
        let id = ToolId("dynamic/fuzzing/seed_gen".into());
        let before = f.registry.describe_tool(&id).unwrap();

        let mut bad = before.clone();
        bad.timeout_seconds = -1.0;
        assert!(f.registry.modify_tool("a", &id, Some(&bad), None).is_err());
        assert_eq!(f.registry.describe_tool(&id).unwrap(), before);
    }

    #[test]
    fn implementation_update_retains_numbered_backup() {
        let f = fixture();
        let id = ToolId("dynamic/fuzzing/seed_gen".into());
        let dir = f.registry.root().join("dynamic/fuzzing/seed_gen");
        let original = std::fs::read(dir.join("run.cmd")).unwrap();

        f.registry
            .modify_tool("a", &id, None, Some("echo brand new behavior\n"))
            .unwrap();
        assert_eq!(std::fs::read(dir.join("run.cmd.v1")).unwrap(), original);
        assert_eq!(
            std::fs::read_to_string(dir.join("run.cmd")).unwrap(),
            "echo brand new behavior\n"
        );
    }

    #[test]
    fn invoke_validates_scope_and_args() {
        let f = fixture();
        let id = ToolId("dynamic/debugger/set_breakpoint".into());
        let manifest = f.registry.describe_tool(&id).unwrap();
        let sandbox = f.runtime.provision(&EnvSpec::bare("t")).unwrap();

        // Not in scope.
        let empty = ToolScope::default();
        assert!(matches!(
            f.registry.invoke_tool(
                &empty,
                &id,
                &serde_json::json!({}),
                InvokeMode::Sync,
                &f.runtime,
                &sandbox,
                65536
            ),
            Err(ToolError::OutOfScope(_))
        ));

        let mut scope = ToolScope::default();
        scope.push_registry(id.clone(), manifest.summary(&id));

        // Missing required param names the parameter.
        match f.registry.invoke_tool(
            &scope,
            &id,
            &serde_json::json!({}),
            InvokeMode::Sync,
            &f.runtime,
            &sandbox,
            65536,
        ) {
            Err(ToolError::ArgValidation { param, .. }) => assert_eq!(param, "location"),
            other => panic!("expected ArgValidation, got {other:?}"),
        }

        // Wrong type names the parameter too.
        match f.registry.invoke_tool(
            &scope,
            &id,
            &serde_json::json!({"location": 7}),
            InvokeMode::Sync,
            &f.runtime,
            &sandbox,
            65536,
        ) {
            Err(ToolError::ArgValidation { param, .. }) => assert_eq!(param, "location"),
            other => panic!("expected ArgValidation, got {other:?}"),
        }
    }

    #[test]
    fn slow_tool_auto_offloads_to_a_handle() {
        let f = fixture();
        let manifest = ToolManifest {
            name: "slow_probe".into(),
            description: "Long-running probe".into(),
            interface: vec![],
            dependencies: vec![],
            environment: None,
            entrypoint: "run.cmd".into(),
            timeout_seconds: 0.05,
            background_default: false,
        };
        let id = f
            .registry
            .create_tool("a", "dynamic/coverage", &manifest, "sleep 1.0\necho done\n")
            .unwrap();
        let mut scope = ToolScope::default();
        scope.push_registry(id.clone(), manifest.summary(&id));
        let sandbox = f.runtime.provision(&EnvSpec::bare("t")).unwrap();

        let outcome = f
            .registry
            .invoke_tool(
                &scope,
                &id,
                &serde_json::json!({}),
                InvokeMode::Sync,
                &f.runtime,
                &sandbox,
                65536,
            )
            .unwrap();
        match outcome {
            ToolInvocation::Background(handle) => {
                let result = f.runtime.wait_result(&handle).unwrap();
                assert_eq!(result.exit_status, 0);
            }
            ToolInvocation::Completed(_) => panic!("expected offload"),
        }
    }

    #[test]
    fn truncation_sets_flag_and_keeps_raw_bytes() {
        let result = crate::sandbox::ExecResult {
            exit_status: 0,
            stdout: "x".repeat(100),
            stderr: String::new(),
        };
        let truncated = ToolResult::from_exec(&result, 64);
        assert!(truncated.truncated);
        assert_eq!(truncated.output.len(), 64);
        assert_eq!(truncated.raw_output.as_ref().unwrap().len(), 100);

        let small = ToolResult::from_exec(&result, 100);
        assert!(!small.truncated);
        assert!(small.raw_output.is_none());
    }
}
