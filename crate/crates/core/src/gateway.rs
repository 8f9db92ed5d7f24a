//! Model gateway: a uniform interface between the kernel and any model
//! backend, plus a deterministic scripted backend that replays canned
//! transcripts for hermetic testing.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Backend id that always resolves to the caller agent's own backend.
pub const INHERIT_BACKEND: &str = "inherit";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown backend '{0}'")]
    UnknownBackend(String),
    #[error("backend '{0}' already registered")]
    DuplicateBackend(String),
    #[error("scripted transcript exhausted after {served} steps")]
    TranscriptExhausted { served: usize },
    #[error("transcript step {step} expected context containing {expected:?}, latest turn was {actual:?}")]
    PredicateMismatch {
        step: usize,
        expected: String,
        actual: String,
    },
    #[error("scripted backend consumed concurrently by more than one run")]
    ConcurrentConsumption,
    #[error("malformed transcript: {0}")]
    MalformedTranscript(String),
    #[error("model request history is not strictly ordered at seq {0}")]
    UnorderedHistory(u64),
}

/// One entry of a request's conversation history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub seq: u64,
    #[serde(flatten)]
    pub kind: TurnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "turn", rename_all = "snake_case")]
pub enum TurnKind {
    /// Text produced by the model.
    Text { text: String },
    /// Kernel-provided context, e.g. a parent-run summary inherited at clone time.
    Context { text: String },
    /// Compressed span of older history.
    Summary { text: String },
    /// A tool call the model made and the response it received.
    ToolExchange {
        tool_name: String,
        args: Value,
        response: Value,
    },
}

impl Turn {
    /// Flat text rendering used for substring predicates in scripted transcripts.
    pub fn render_text(&self) -> String {
        match &self.kind {
            TurnKind::Text { text } | TurnKind::Context { text } | TurnKind::Summary { text } => {
                text.clone()
            }
            TurnKind::ToolExchange {
                tool_name,
                args,
                response,
            } => format!("{tool_name} {args} {response}"),
        }
    }
}

/// Name, one-line description, and parameter schema offered to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSummary {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

/// A single completion request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRequest {
    pub agent_id: String,
    pub system_instruction: String,
    pub history: Vec<Turn>,
    pub available_tools: Vec<ToolSummary>,
    /// Opaque sampling/options document; the gateway never interprets it.
    #[serde(default)]
    pub options: Value,
}

impl ModelRequest {
    pub fn new(agent_id: impl Into<String>, system_instruction: impl Into<String>) -> Self {
        Self {
            agent_id: agent_id.into(),
            system_instruction: system_instruction.into(),
            history: Vec::new(),
            available_tools: Vec::new(),
            options: Value::Null,
        }
    }

    /// Append a turn with the next sequence number.
    pub fn push_turn(&mut self, kind: TurnKind) {
        let seq = self.history.last().map(|t| t.seq + 1).unwrap_or(1);
        self.history.push(Turn { seq, kind });
    }

    fn check_ordered(&self) -> Result<(), GatewayError> {
        let mut prev = 0u64;
        for turn in &self.history {
            if turn.seq <= prev {
                return Err(GatewayError::UnorderedHistory(turn.seq));
            }
            prev = turn.seq;
        }
        Ok(())
    }

    /// Text the scripted predicate is matched against: the latest turn, or the
    /// system instruction when the history is still empty.
    pub fn predicate_context(&self) -> String {
        self.history
            .last()
            .map(Turn::render_text)
            .unwrap_or_else(|| self.system_instruction.clone())
    }
}

/// The model's answer: either final text or a single tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelResponse {
    Text { text: String },
    ToolCall { tool_call: ToolCallRequest },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRequest {
    pub tool_name: String,
    #[serde(default)]
    pub args: Value,
}

impl ModelResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ModelResponse::Text { text: text.into() }
    }

    pub fn tool_call(tool_name: impl Into<String>, args: Value) -> Self {
        ModelResponse::ToolCall {
            tool_call: ToolCallRequest {
                tool_name: tool_name.into(),
                args,
            },
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ModelResponse::Text { text } => Some(text),
            _ => None,
        }
    }

    pub fn as_tool_call(&self) -> Option<&ToolCallRequest> {
        match self {
            ModelResponse::ToolCall { tool_call } => Some(tool_call),
            _ => None,
        }
    }
}

/// One step of a scripted transcript: an optional substring predicate on the
/// latest turn plus the response to replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub match_substring: Option<String>,
    pub response: ModelResponse,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTranscript {
    pub steps: Vec<ScriptStep>,
}

impl ScriptedTranscript {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        Self { steps }
    }

    /// Steps without predicates, in order. The common case in tests.
    pub fn of_responses(responses: Vec<ModelResponse>) -> Self {
        Self {
            steps: responses
                .into_iter()
                .map(|response| ScriptStep {
                    match_substring: None,
                    response,
                })
                .collect(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, GatewayError> {
        serde_json::from_str(text).map_err(|e| GatewayError::MalformedTranscript(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path)
            .map_err(|e| GatewayError::MalformedTranscript(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}

/// Anything that can serve completions.
pub trait ModelBackend: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError>;
}

/// Deterministic backend replaying a fixed transcript, strictly in order.
///
/// A single instance may only be consumed by one run at a time; overlapping
/// `complete` calls are reported as [`GatewayError::ConcurrentConsumption`].
pub struct ScriptedBackend {
    steps: Vec<ScriptStep>,
    cursor: Mutex<usize>,
    busy: AtomicBool,
    served_log: Mutex<Vec<ModelRequest>>,
}

impl ScriptedBackend {
    pub fn new(transcript: ScriptedTranscript) -> Self {
        Self {
            steps: transcript.steps,
            cursor: Mutex::new(0),
            busy: AtomicBool::new(false),
            served_log: Mutex::new(Vec::new()),
        }
    }

    /// Requests this backend has served, in order. Test observability hook.
    pub fn served_requests(&self) -> Vec<ModelRequest> {
        self.served_log.lock().unwrap().clone()
    }

    pub fn steps_remaining(&self) -> usize {
        self.steps.len() - *self.cursor.lock().unwrap()
    }

    fn begin_exclusive(&self) -> Result<ExclusiveGuard<'_>, GatewayError> {
        if self.busy.swap(true, Ordering::SeqCst) {
            return Err(GatewayError::ConcurrentConsumption);
        }
        Ok(ExclusiveGuard { flag: &self.busy })
    }
}

struct ExclusiveGuard<'a> {
    flag: &'a AtomicBool,
}

impl Drop for ExclusiveGuard<'_> {
    fn drop(&mut self) {
        self.flag.store(false, Ordering::SeqCst);
    }
}

impl ModelBackend for ScriptedBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let _guard = self.begin_exclusive()?;
        let mut cursor = self.cursor.lock().unwrap();
        let step_index = *cursor;
        let step = self
            .steps
            .get(step_index)
            .ok_or(GatewayError::TranscriptExhausted { served: step_index })?;
        if let Some(expected) = &step.match_substring {
            let actual = request.predicate_context();
            if !actual.contains(expected.as_str()) {
                return Err(GatewayError::PredicateMismatch {
                    step: step_index,
                    expected: expected.clone(),
                    actual,
                });
            }
        }
        *cursor += 1;
        self.served_log.lock().unwrap().push(request.clone());
        Ok(step.response.clone())
    }
}

/// Registry of named backends. Concurrent reads, serialized registration.
#[derive(Default)]
pub struct Gateway {
    backends: RwLock<HashMap<String, Arc<dyn ModelBackend>>>,
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_backend(
        &self,
        backend_id: &str,
        backend: Arc<dyn ModelBackend>,
    ) -> Result<(), GatewayError> {
        if backend_id == INHERIT_BACKEND {
            // "inherit" is permanently reserved for parent-backend resolution.
            return Err(GatewayError::DuplicateBackend(backend_id.to_string()));
        }
        let mut backends = self.backends.write().unwrap();
        if backends.contains_key(backend_id) {
            return Err(GatewayError::DuplicateBackend(backend_id.to_string()));
        }
        backends.insert(backend_id.to_string(), backend);
        Ok(())
    }

    pub fn has_backend(&self, backend_id: &str) -> bool {
        self.backends.read().unwrap().contains_key(backend_id)
    }

    pub fn backend(&self, backend_id: &str) -> Result<Arc<dyn ModelBackend>, GatewayError> {
        self.backends
            .read()
            .unwrap()
            .get(backend_id)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownBackend(backend_id.to_string()))
    }

    pub fn complete(
        &self,
        backend_id: &str,
        request: &ModelRequest,
    ) -> Result<ModelResponse, GatewayError> {
        request.check_ordered()?;
        self.backend(backend_id)?.complete(request)
    }
}

/// Deterministic monotone token estimate: ceil(byte_length / 4).
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}
