//! Agent topology primitives: the unified sub-agent pool, agent spec wire
//! shapes, structured agent responses, and the ensemble message board.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::tools::ToolScope;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("agent '{0}' already exists in the pool")]
    DuplicateAgentName(String),
    #[error("tool '{0}' is not resolvable in the parent scope or the registry")]
    UnresolvableTool(String),
    #[error("model '{0}' is not a registered backend")]
    InvalidModel(String),
    #[error("Agent '{0}' not found.")]
    AgentNotFound(String),
    #[error("sub-agent run failed: {0}")]
    SubAgentError(String),
    #[error("message board '{0}' is closed")]
    BoardClosed(String),
    #[error("unknown message board '{0}'")]
    UnknownBoard(String),
    #[error("step limit of {0} reached before a final text turn")]
    StepLimitExceeded(u64),
    #[error("ensemble request invalid: {0}")]
    InvalidEnsemble(String),
    #[error("board io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMemory {
    #[default]
    Empty,
    ParentSummary,
}

/// Metadata defining an agent; the unit stored in the sub-agent pool.
/// Field names follow the tool-call wire shape (`agent_name`, `instruction`,
/// `model_name`, `tools_list`, `description`); `tools` and `role` are
/// accepted aliases seen in model-authored calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_name: String,
    #[serde(default, alias = "role")]
    pub description: String,
    pub instruction: String,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default, alias = "tools")]
    pub tools_list: Vec<String>,
    #[serde(default)]
    pub initial_memory: InitialMemory,
}

fn default_model() -> String {
    "inherit".to_string()
}

impl AgentSpec {
    pub fn new(agent_name: &str, instruction: &str) -> Self {
        Self {
            agent_name: agent_name.to_string(),
            description: String::new(),
            instruction: instruction.to_string(),
            model_name: default_model(),
            tools_list: Vec::new(),
            initial_memory: InitialMemory::Empty,
        }
    }

    pub fn with_description(mut self, description: &str) -> Self {
        self.description = description.to_string();
        self
    }

    pub fn with_model(mut self, model_name: &str) -> Self {
        self.model_name = model_name.to_string();
        self
    }

    pub fn with_tools(mut self, tools: &[&str]) -> Self {
        self.tools_list = tools.iter().map(|t| t.to_string()).collect();
        self
    }

    pub fn with_initial_memory(mut self, initial_memory: InitialMemory) -> Self {
        self.initial_memory = initial_memory;
        self
    }

    /// Canonical wire bytes; the pool-isolation invariant compares these.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("spec serializes")
    }
}

#[derive(Debug, Clone)]
pub struct AgentPoolEntry {
    pub spec: AgentSpec,
    pub created_by: String,
    pub created_at: u64,
    pub invocation_count: u64,
    pub scope: ToolScope,
    /// Parent-run summary captured at creation for `parent_summary` specs.
    pub initial_context: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentListing {
    pub agent_name: String,
    pub description: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ListAgentsReport {
    pub total_active_agents: usize,
    pub agents: Vec<AgentListing>,
    pub message: String,
}

impl ListAgentsReport {
    pub fn to_doc(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// The unified sub-agent pool: concurrent lookups, serialized registration.
#[derive(Default)]
pub struct AgentPool {
    entries: RwLock<BTreeMap<String, AgentPoolEntry>>,
}

impl AgentPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, entry: AgentPoolEntry) -> Result<(), TopologyError> {
        let mut entries = self.entries.write().unwrap();
        let name = entry.spec.agent_name.clone();
        if entries.contains_key(&name) {
            return Err(TopologyError::DuplicateAgentName(name));
        }
        entries.insert(name, entry);
        Ok(())
    }

    pub fn get(&self, agent_name: &str) -> Result<AgentPoolEntry, TopologyError> {
        self.entries
            .read()
            .unwrap()
            .get(agent_name)
            .cloned()
            .ok_or_else(|| TopologyError::AgentNotFound(agent_name.to_string()))
    }

    pub fn contains(&self, agent_name: &str) -> bool {
        self.entries.read().unwrap().contains_key(agent_name)
    }

    pub fn record_invocation(&self, agent_name: &str) {
        if let Some(entry) = self.entries.write().unwrap().get_mut(agent_name) {
            entry.invocation_count += 1;
        }
    }

    pub fn invocation_count(&self, agent_name: &str) -> u64 {
        self.entries
            .read()
            .unwrap()
            .get(agent_name)
            .map(|e| e.invocation_count)
            .unwrap_or(0)
    }

    /// Case-insensitive substring filter over name and description.
    pub fn list(&self, filter: Option<&str>) -> ListAgentsReport {
        let needle = filter.unwrap_or("").to_lowercase();
        let entries = self.entries.read().unwrap();
        let agents: Vec<AgentListing> = entries
            .values()
            .filter(|entry| {
                needle.is_empty()
                    || entry.spec.agent_name.to_lowercase().contains(&needle)
                    || entry.spec.description.to_lowercase().contains(&needle)
            })
            .map(|entry| AgentListing {
                agent_name: entry.spec.agent_name.clone(),
                description: entry.spec.description.clone(),
            })
            .collect();
        let total = agents.len();
        let message = if total == 0 {
            "Found 0 total agents. If no suitable agents exist, create a dynamic sub-agent."
                .to_string()
        } else {
            format!("Found {total} total agents.")
        };
        ListAgentsReport {
            total_active_agents: total,
            agents,
            message,
        }
    }

    /// Canonical bytes of every pooled spec, keyed by name. The pool
    /// isolation property compares snapshots taken around invocations.
    pub fn spec_snapshot(&self) -> BTreeMap<String, Vec<u8>> {
        self.entries
            .read()
            .unwrap()
            .iter()
            .map(|(name, entry)| (name.clone(), entry.spec.canonical_bytes()))
            .collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.read().unwrap().keys().cloned().collect()
    }
}

/// Structured response returned to the caller of a sub-agent.
#[derive(Debug, Clone, Serialize)]
pub struct AgentResponse {
    pub agent: String,
    pub status: String,
    pub summary: Vec<String>,
    pub observations: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AgentResponse {
    pub fn success(agent: &str, final_text: &str, observations: Vec<String>) -> Self {
        Self {
            agent: agent.to_string(),
            status: "success".to_string(),
            summary: final_text.lines().map(str::to_string).collect(),
            observations,
            error: None,
        }
    }

    pub fn run_failure(agent: &str, error: &str) -> Self {
        Self {
            agent: agent.to_string(),
            status: "failed".to_string(),
            summary: Vec::new(),
            observations: Vec::new(),
            error: Some(error.to_string()),
        }
    }

    /// The not-found shape surfaced to models: a failed status, the exact
    /// error string, and guidance toward creating a dynamic sub-agent.
    pub fn not_found_doc(agent_name: &str) -> Value {
        json!({
            "status": "failed",
            "error": format!("Agent '{agent_name}' not found."),
            "summary": "No suitable agents available. Create a dynamic sub-agent and invoke it via the agent ensemble.",
        })
    }

    pub fn to_doc(&self) -> Value {
        serde_json::to_value(self).expect("response serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardMessage {
    pub seq: u64,
    pub writer: String,
    pub text: String,
}

struct BoardState {
    messages: Vec<BoardMessage>,
    offsets: HashMap<String, u64>,
    members: HashSet<String>,
    closed: bool,
    file: File,
}

/// Append-only message board shared by one ensemble. Appends take the board
/// lock and are durable in the board file before returning.
pub struct Board {
    id: String,
    path: PathBuf,
    state: Mutex<BoardState>,
}

impl Board {
    pub fn create(dir: &Path, id: &str) -> Result<Self, TopologyError> {
        std::fs::create_dir_all(dir).map_err(|e| TopologyError::Io(e.to_string()))?;
        let path = dir.join(format!("{id}.jsonl"));
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| TopologyError::Io(e.to_string()))?;
        Ok(Self {
            id: id.to_string(),
            path,
            state: Mutex::new(BoardState {
                messages: Vec::new(),
                offsets: HashMap::new(),
                members: HashSet::new(),
                closed: false,
                file,
            }),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, member: &str) {
        let mut state = self.state.lock().unwrap();
        state.members.insert(member.to_string());
        state.offsets.entry(member.to_string()).or_insert(0);
    }

    pub fn members(&self) -> Vec<String> {
        let state = self.state.lock().unwrap();
        let mut members: Vec<String> = state.members.iter().cloned().collect();
        members.sort();
        members
    }

    /// Append one message under mutual exclusion; the next dense sequence
    /// number is assigned and the record is flushed to disk before return.
    pub fn post(&self, writer: &str, text: &str) -> Result<u64, TopologyError> {
        let mut state = self.state.lock().unwrap();
        if state.closed {
            return Err(TopologyError::BoardClosed(self.id.clone()));
        }
        if !state.members.contains(writer) {
            return Err(TopologyError::UnknownBoard(format!(
                "{}: '{writer}' is not a member",
                self.id
            )));
        }
        let seq = state.messages.len() as u64 + 1;
        let message = BoardMessage {
            seq,
            writer: writer.to_string(),
            text: text.to_string(),
        };
        let line = serde_json::to_string(&message).map_err(|e| TopologyError::Io(e.to_string()))?;
        writeln!(state.file, "{line}").map_err(|e| TopologyError::Io(e.to_string()))?;
        state
            .file
            .sync_data()
            .map_err(|e| TopologyError::Io(e.to_string()))?;
        state.messages.push(message);
        Ok(seq)
    }

    /// Messages past the reader's offset, excluding its own; advances the
    /// offset to the board head.
    pub fn drain(&self, reader: &str) -> Result<Vec<BoardMessage>, TopologyError> {
        let mut state = self.state.lock().unwrap();
        if !state.members.contains(reader) {
            return Err(TopologyError::UnknownBoard(format!(
                "{}: '{reader}' is not a member",
                self.id
            )));
        }
        let offset = *state.offsets.get(reader).unwrap_or(&0);
        let head = state.messages.len() as u64;
        let diffs: Vec<BoardMessage> = state
            .messages
            .iter()
            .filter(|m| m.seq > offset && m.writer != reader)
            .cloned()
            .collect();
        state.offsets.insert(reader.to_string(), head);
        Ok(diffs)
    }

    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
    }

    pub fn message_count(&self) -> usize {
        self.state.lock().unwrap().messages.len()
    }
}

/// Live boards by id. Read offsets live here in the kernel, not in the
/// board file, which stays append-only.
#[derive(Default)]
pub struct BoardTable {
    boards: Mutex<HashMap<String, std::sync::Arc<Board>>>,
}

impl BoardTable {
    pub fn insert(&self, board: std::sync::Arc<Board>) {
        self.boards
            .lock()
            .unwrap()
            .insert(board.id().to_string(), board);
    }

    pub fn get(&self, id: &str) -> Result<std::sync::Arc<Board>, TopologyError> {
        self.boards
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| TopologyError::UnknownBoard(id.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(spec: AgentSpec) -> AgentPoolEntry {
        AgentPoolEntry {
            spec,
            created_by: "test".into(),
            created_at: 0,
            invocation_count: 0,
            scope: ToolScope::default(),
            initial_context: None,
        }
    }

    #[test]
    fn wire_shape_accepts_model_authored_aliases() {
        // `tools` + `role`, no model, as emitted in create_agent calls.
        let spec: AgentSpec = serde_json::from_value(json!({
            "agent_name": "gdb_helper",
            "role": "GDB debugging assistant",
            "instruction": "Load binaries, set breakpoints, run with the provided PoC.",
            "tools": ["set_file", "step_control", "set_breakpoint"],
        }))
        .unwrap();
        assert_eq!(spec.description, "GDB debugging assistant");
        assert_eq!(spec.model_name, "inherit");
        assert_eq!(spec.tools_list.len(), 3);

        // Canonical field names round-trip.
        let spec: AgentSpec = serde_json::from_value(json!({
            "agent_name": "libecc_static_reader",
            "instruction": "You are a precise static-analysis assistant.",
            "model_name": "inherit",
            "tools_list": ["retrieval", "static_analysis"],
            "description": "Sub-agent specialized in static code-path analysis.",
        }))
        .unwrap();
        let rendered = serde_json::to_value(&spec).unwrap();
        assert_eq!(rendered["tools_list"][0], "retrieval");
        assert_eq!(rendered["model_name"], "inherit");
    }

    #[test]
    fn pool_rejects_duplicates_and_preserves_entries() {
        let pool = AgentPool::new();
        pool.register(entry(AgentSpec::new("gdb_helper", "debug")))
            .unwrap();
        let before = pool.spec_snapshot();
        match pool.register(entry(AgentSpec::new("gdb_helper", "other"))) {
            Err(TopologyError::DuplicateAgentName(name)) => assert_eq!(name, "gdb_helper"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
        assert_eq!(pool.spec_snapshot(), before);
    }

    #[test]
    fn list_filters_by_substring_and_reports_guidance_when_empty() {
        let pool = AgentPool::new();
        let empty = pool.list(None);
        assert_eq!(empty.total_active_agents, 0);
        assert_eq!(
            empty.message,
            "Found 0 total agents. If no suitable agents exist, create a dynamic sub-agent."
        );

        pool.register(entry(
            AgentSpec::new("gdb_helper", "i").with_description("GDB debugging assistant"),
        ))
        .unwrap();
        pool.register(entry(
            AgentSpec::new("libecc_static_reader", "i")
                .with_description("static code-path analysis"),
        ))
        .unwrap();

        let hits = pool.list(Some("gdb"));
        assert_eq!(hits.total_active_agents, 1);
        assert_eq!(hits.agents[0].agent_name, "gdb_helper");

        let none = pool.list(Some("quantum"));
        assert_eq!(none.total_active_agents, 0);
        assert!(none.agents.is_empty());

        let all = pool.list(None);
        assert_eq!(all.total_active_agents, 2);
        assert_eq!(all.message, "Found 2 total agents.");
    }

    #[test]
    fn board_assigns_dense_seqs_and_tracks_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let board = Board::create(dir.path(), "board-1").unwrap();
        board.join("a");
        board.join("b");

        assert_eq!(board.post("a", "first").unwrap(), 1);
        assert_eq!(board.post("b", "second").unwrap(), 2);

        // Reader at offset 0 sees only the other writer's message.
        let diffs = board.drain("a").unwrap();
        assert_eq!(diffs.len(), 1);
        assert_eq!(diffs[0].text, "second");
        // Offset advanced to head: an immediate second drain is empty.
        assert!(board.drain("a").unwrap().is_empty());
    }

    #[test]
    fn concurrent_posts_stay_dense_and_durable() {
        let dir = tempfile::tempdir().unwrap();
        let board = std::sync::Arc::new(Board::create(dir.path(), "board-2").unwrap());
        board.join("w1");
        board.join("w2");

        std::thread::scope(|scope| {
            for writer in ["w1", "w2"] {
                let board = std::sync::Arc::clone(&board);
                scope.spawn(move || {
                    for n in 0..50 {
                        board
                            .post(writer, &format!("{writer} message {n}"))
                            .unwrap();
                    }
                });
            }
        });

        // File holds exactly 100 records with dense seqs 1..=100.
        let text = std::fs::read_to_string(board.path()).unwrap();
        let mut seqs: Vec<u64> = text
            .lines()
            .map(|line| serde_json::from_str::<BoardMessage>(line).unwrap().seq)
            .collect();
        assert_eq!(seqs.len(), 100);
        seqs.sort_unstable();
        assert_eq!(seqs, (1..=100).collect::<Vec<u64>>());

        // Each writer's own messages appear in program order in the file.
        for writer in ["w1", "w2"] {
            let texts: Vec<String> = text
                .lines()
                .map(|line| serde_json::from_str::<BoardMessage>(line).unwrap())
                .filter(|m| m.writer == writer)
                .map(|m| m.text)
                .collect();
            let expected: Vec<String> = (0..50).map(|n| format!("{writer} message {n}")).collect();
            assert_eq!(texts, expected);
        }
    }

    #[test]
    fn drain_until_quiescence_delivers_exactly_once() {
        let dir = tempfile::tempdir().unwrap();
        let board = Board::create(dir.path(), "board-3").unwrap();
        let members = ["a", "b", "c"];
        for member in members {
            board.join(member);
        }
        for round in 0..5 {
            for member in members {
                board.post(member, &format!("{member} r{round}")).unwrap();
            }
        }

        let mut delivered: HashMap<(String, u64), usize> = HashMap::new();
        for member in members {
            loop {
                let diffs = board.drain(member).unwrap();
                if diffs.is_empty() {
                    break;
                }
                for message in diffs {
                    *delivered
                        .entry((member.to_string(), message.seq))
                        .or_insert(0) += 1;
                }
            }
        }

        // Every (reader, message) pair with reader != writer exactly once.
        let all: Vec<BoardMessage> = std::fs::read_to_string(board.path())
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        for reader in members {
            for message in &all {
                let count = delivered
                    .get(&(reader.to_string(), message.seq))
                    .copied()
                    .unwrap_or(0);
                if message.writer == reader {
                    assert_eq!(count, 0, "own message delivered");
                } else {
                    assert_eq!(count, 1, "message {} to {reader}", message.seq);
                }
            }
        }
    }

    #[test]
    fn closed_board_rejects_posts() {
        let dir = tempfile::tempdir().unwrap();
        let board = Board::create(dir.path(), "board-4").unwrap();
        board.join("a");
        board.post("a", "before close").unwrap();
        board.close();
        assert!(matches!(
            board.post("a", "after close"),
            Err(TopologyError::BoardClosed(_))
        ));
    }

    #[test]
    fn non_member_access_is_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let board = Board::create(dir.path(), "board-5").unwrap();
        board.join("a");
        assert!(matches!(
            board.drain("stranger"),
            Err(TopologyError::UnknownBoard(_))
        ));
        let table = BoardTable::default();
        assert!(matches!(
            table.get("missing"),
            Err(TopologyError::UnknownBoard(_))
        ));
    }
}
