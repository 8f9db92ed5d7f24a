//! Kernel assembly: wires the gateway, agent pool, tool registry, sandbox
//! runtime, and both memory tiers together, and drives the agent loop that
//! alternates model completions with tool executions.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, KernelConfig};
use crate::gateway::{
    Gateway, GatewayError, ModelRequest, ModelResponse, ScriptedBackend, ScriptedTranscript,
    ToolSummary, INHERIT_BACKEND,
};
use crate::ltm::{HashEmbedder, LtmError, LtmStore, RetrievalQuery};
use crate::sandbox::{
    EnvSpec, InvocationHandle, LocalDriver, SandboxError, SandboxId, SandboxRuntime,
};
use crate::stm::{
    history_token_estimate, EventPayload, GraphPattern, NodeId, RunFilter, RunStatus, StmError,
    StmGraph,
};
use crate::tools::{
    InvokeMode, ParamSpec, ParamType, ScopeEntry, ToolError, ToolId, ToolInvocation, ToolRegistry,
    ToolResult, ToolScope,
};
use crate::topology::{
    AgentPool, AgentPoolEntry, AgentResponse, AgentSpec, Board, BoardMessage, BoardTable,
    InitialMemory, TopologyError,
};

pub const MEMORY_AGENT_NAME: &str = "memory_agent";

/// Tools the memory agent runs with: short-term retrieval plus the full
/// long-term read/write set. No short-term writers.
pub const MEMORY_AGENT_TOOLS: [&str; 11] = [
    "list_agent_runs",
    "inspect_events",
    "recover_raw",
    "graph_query",
    "create_node",
    "create_edge",
    "list_schema",
    "search_nodes",
    "grep_nodes",
    "update_node",
    "delete_node",
];

const SUMMARIZER_INSTRUCTION: &str =
    "Compress the following execution history into a concise summary that preserves every \
     detail needed to continue the task.";

const ENSEMBLE_SUMMARY_INSTRUCTION: &str =
    "Combine the ensemble member responses below into one concise summary for the caller.";

#[derive(Debug, Error)]
pub enum KernelError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Stm(#[from] StmError),
    #[error(transparent)]
    Ltm(#[from] LtmError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("memory agent routing failure: {0}")]
    RoutingFailure(String),
    #[error("{0}")]
    Protocol(String),
}

pub struct RunLimits {
    pub max_steps: u64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_id: NodeId,
    pub final_text: String,
    pub event_count: usize,
}

/// Execution context of one live agent loop, shared with tool dispatch.
pub struct RunCtx<'a> {
    pub run_id: NodeId,
    pub agent_instance: String,
    pub backend_id: String,
    pub scope: ToolScope,
    pub board: Option<Arc<Board>>,
    pub graph: &'a StmGraph,
    pub current_event: NodeId,
    pub max_steps: u64,
}

struct RunParams<'a> {
    spec: &'a AgentSpec,
    task: &'a str,
    parent_event: Option<NodeId>,
    backend_id: String,
    scope: ToolScope,
    max_steps: u64,
    board: Option<Arc<Board>>,
    graph: &'a StmGraph,
    initial_context: Option<String>,
    peer_note: Option<String>,
    is_clone: bool,
}

struct CloneGuard<'a>(&'a AtomicUsize);

impl<'a> CloneGuard<'a> {
    fn enter(counter: &'a AtomicUsize) -> Self {
        counter.fetch_add(1, Ordering::SeqCst);
        Self(counter)
    }
}

impl Drop for CloneGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

pub struct BuiltinDesc {
    pub name: &'static str,
    pub description: &'static str,
    pub params: Vec<ParamSpec>,
}

fn builtin_table() -> &'static [BuiltinDesc] {
    static TABLE: OnceLock<Vec<BuiltinDesc>> = OnceLock::new();
    TABLE.get_or_init(|| {
        use ParamType::*;
        let p = ParamSpec::required;
        let o = ParamSpec::optional;
        vec![
            BuiltinDesc {
                name: "create_agent",
                description: "Create a sub-agent and register it in the sub-agent pool.",
                params: vec![
                    p("agent_name", String, "unique agent name"),
                    p("instruction", String, "system instruction for the agent"),
                    o("description", String, "one-line description"),
                    o("model_name", String, "backend id or 'inherit'"),
                    o("tools_list", List, "tool names or registry paths"),
                    o("initial_memory", String, "empty | parent_summary"),
                ],
            },
            BuiltinDesc {
                name: "list_agents",
                description: "List or search sub-agents in the pool by name or description.",
                params: vec![o("filter", String, "substring filter")],
            },
            BuiltinDesc {
                name: "call_agent",
                description: "Clone a pooled sub-agent and run it on a task.",
                params: vec![
                    p("agent_name", String, "pooled agent to run"),
                    o("task_message", String, "the task to execute"),
                ],
            },
            BuiltinDesc {
                name: "run_ensemble",
                description: "Run several pooled sub-agents on one task in parallel and summarize their responses.",
                params: vec![
                    p("task", String, "shared task description"),
                    p("members", List, "list of {agent_name, model_name}"),
                ],
            },
            BuiltinDesc {
                name: "post_message",
                description: "Write a message to the ensemble message board.",
                params: vec![p("text", String, "message body")],
            },
            BuiltinDesc {
                name: "search_tools",
                description: "Keyword search over the tool registry.",
                params: vec![p("keyword", String, "substring to search for")],
            },
            BuiltinDesc {
                name: "expand_category",
                description: "Expand one tool registry category level.",
                params: vec![p("path", String, "registry category path")],
            },
            BuiltinDesc {
                name: "describe_tool",
                description: "Fetch the full validated manifest of a registry tool.",
                params: vec![p("path", String, "registry tool path")],
            },
            BuiltinDesc {
                name: "create_tool",
                description: "Write a new tool implementation and register it in the registry.",
                params: vec![
                    p("category", String, "target registry category"),
                    p("manifest", Document, "tool manifest document"),
                    p("implementation", String, "entrypoint source"),
                ],
            },
            BuiltinDesc {
                name: "modify_tool",
                description: "Replace a registry tool's manifest and/or implementation.",
                params: vec![
                    p("path", String, "registry tool path"),
                    o("manifest", Document, "replacement manifest"),
                    o("implementation", String, "replacement entrypoint source"),
                ],
            },
            BuiltinDesc {
                name: "poll_invocation",
                description: "Poll the state of a background invocation handle.",
                params: vec![p("handle_id", String, "invocation handle")],
            },
            BuiltinDesc {
                name: "fetch_invocation",
                description: "Fetch the result of a finished background invocation.",
                params: vec![p("handle_id", String, "invocation handle")],
            },
            BuiltinDesc {
                name: "terminate_invocation",
                description: "Terminate a pending or running background invocation.",
                params: vec![p("handle_id", String, "invocation handle")],
            },
            BuiltinDesc {
                name: "list_agent_runs",
                description: "List recorded agent executions in short-term memory.",
                params: vec![
                    o("name", String, "agent name substring"),
                    o("status", String, "running | succeeded | failed"),
                ],
            },
            BuiltinDesc {
                name: "inspect_events",
                description: "Inspect events of one agent run, optionally by index range.",
                params: vec![
                    p("run", Integer, "run node id"),
                    o("first", Integer, "first event index"),
                    o("last", Integer, "last event index"),
                ],
            },
            BuiltinDesc {
                name: "recover_raw",
                description: "Recover the full unsummarized output attached to an event.",
                params: vec![p("event", Integer, "event node id")],
            },
            BuiltinDesc {
                name: "graph_query",
                description: "Run a structured pattern query over the execution graph.",
                params: vec![p("pattern", Document, "node/edge pattern")],
            },
            BuiltinDesc {
                name: "create_node",
                description: "Store a typed, labeled node in long-term memory.",
                params: vec![
                    p("node_type", String, "node type"),
                    p("label", String, "keyword or question"),
                    p("content", String, "description or answer"),
                ],
            },
            BuiltinDesc {
                name: "create_edge",
                description: "Insert a directed typed edge between long-term memory nodes.",
                params: vec![
                    p("src", Integer, "source node id"),
                    p("dst", Integer, "target node id"),
                    p("edge_type", String, "edge type"),
                ],
            },
            BuiltinDesc {
                name: "list_schema",
                description: "List the known long-term node and edge types.",
                params: vec![],
            },
            BuiltinDesc {
                name: "search_nodes",
                description: "Similarity search over long-term nodes of one type, with one-hop subgraphs.",
                params: vec![
                    p("node_type", String, "node type to search"),
                    p("query_label", String, "query text"),
                    o("top_n", Integer, "results to return (default 5)"),
                ],
            },
            BuiltinDesc {
                name: "grep_nodes",
                description: "Pattern lookup over long-term node labels.",
                params: vec![p("pattern", String, "regular expression")],
            },
            BuiltinDesc {
                name: "update_node",
                description: "Update a long-term node's label and/or content.",
                params: vec![
                    p("node_id", Integer, "node id"),
                    o("new_label", String, "replacement label"),
                    o("new_content", String, "replacement content"),
                ],
            },
            BuiltinDesc {
                name: "delete_node",
                description: "Delete a long-term node and its incident edges.",
                params: vec![p("node_id", Integer, "node id")],
            },
        ]
    })
}

pub fn builtin_summary(name: &str) -> Option<ToolSummary> {
    builtin_table()
        .iter()
        .find(|d| d.name == name)
        .map(|d| ToolSummary {
            name: d.name.to_string(),
            description: d.description.to_string(),
            parameters: serde_json::to_value(&d.params).unwrap_or(Value::Null),
        })
}

pub fn builtin_names() -> Vec<&'static str> {
    builtin_table().iter().map(|d| d.name).collect()
}

fn error_doc(message: impl Into<String>) -> Value {
    json!({"status": "failed", "error": message.into()})
}

fn doc_is_error(doc: &Value) -> bool {
    doc.get("status").and_then(Value::as_str) == Some("failed")
}

/// The assembled runtime kernel.
pub struct Kernel {
    config: KernelConfig,
    gateway: Gateway,
    pool: AgentPool,
    stm: StmGraph,
    ltm: LtmStore,
    registry: ToolRegistry,
    sandboxes: SandboxRuntime,
    driver: Arc<LocalDriver>,
    boards: BoardTable,
    envs: RwLock<HashMap<String, EnvSpec>>,
    tool_sandboxes: Mutex<HashMap<String, SandboxId>>,
    live_clones: AtomicUsize,
    next_board: AtomicU64,
    tick: AtomicU64,
    default_backend: RwLock<Option<String>>,
}

impl Kernel {
    pub fn new(config: KernelConfig) -> Result<Self, KernelError> {
        config.validate()?;
        let registry = ToolRegistry::open(&config.registry_root)?;
        let driver = Arc::new(LocalDriver::new(
            &config.workspace.join(".sandboxes"),
            &config.workspace,
        )?);
        let sandboxes = SandboxRuntime::new(driver.clone());

        let ltm = LtmStore::new(Arc::new(HashEmbedder::default()));
        if let Some(path) = &config.ltm_path {
            if path.is_file() {
                ltm.import_file(path)?;
            }
        }

        let mut envs = HashMap::new();
        envs.insert("default".to_string(), EnvSpec::bare("default"));
        for spec in registry.collect_env_specs()? {
            envs.insert(spec.env_id.clone(), spec);
        }

        let kernel = Self {
            stm: StmGraph::new(config.truncation_limit_bytes),
            config,
            gateway: Gateway::new(),
            pool: AgentPool::new(),
            ltm,
            registry,
            sandboxes,
            driver,
            boards: BoardTable::default(),
            envs: RwLock::new(envs),
            tool_sandboxes: Mutex::new(HashMap::new()),
            live_clones: AtomicUsize::new(0),
            next_board: AtomicU64::new(1),
            tick: AtomicU64::new(1),
            default_backend: RwLock::new(None),
        };

        for decl in kernel.config.backends.clone() {
            let transcript = ScriptedTranscript::from_file(
                decl.transcript.as_deref().expect("validated scripted decl"),
            )?;
            kernel.register_scripted(&decl.id, transcript)?;
        }

        // The memory agent is an ordinary pooled agent installed at startup.
        kernel.install_agent(
            "kernel",
            AgentSpec::new(
                MEMORY_AGENT_NAME,
                "You are the memory agent, the gateway to both memory tiers. Decide whether \
                 the query targets short-term execution history or long-term knowledge, call \
                 the appropriate memory tools, and finish with a concise textual summary of \
                 what you found or changed.",
            )
            .with_description(
                "Routes natural-language memory queries to short-term retrieval or long-term \
                 search/update/store.",
            )
            .with_tools(&MEMORY_AGENT_TOOLS),
        )?;

        Ok(kernel)
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn pool(&self) -> &AgentPool {
        &self.pool
    }

    pub fn stm(&self) -> &StmGraph {
        &self.stm
    }

    pub fn ltm(&self) -> &LtmStore {
        &self.ltm
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn sandbox_runtime(&self) -> &SandboxRuntime {
        &self.sandboxes
    }

    pub fn local_driver(&self) -> &Arc<LocalDriver> {
        &self.driver
    }

    pub fn boards(&self) -> &BoardTable {
        &self.boards
    }

    pub fn live_clones(&self) -> usize {
        self.live_clones.load(Ordering::SeqCst)
    }

    pub fn register_scripted(
        &self,
        id: &str,
        transcript: ScriptedTranscript,
    ) -> Result<Arc<ScriptedBackend>, KernelError> {
        let backend = Arc::new(ScriptedBackend::new(transcript));
        self.gateway.register_backend(id, backend.clone())?;
        let mut default = self.default_backend.write().unwrap();
        if default.is_none() {
            *default = Some(id.to_string());
        }
        Ok(backend)
    }

    pub fn set_default_backend(&self, id: &str) {
        *self.default_backend.write().unwrap() = Some(id.to_string());
    }

    fn resolve_backend(
        &self,
        model_name: &str,
        inherited: Option<&str>,
    ) -> Result<String, TopologyError> {
        if model_name == INHERIT_BACKEND {
            if let Some(parent) = inherited {
                return Ok(parent.to_string());
            }
            if let Some(default) = self.default_backend.read().unwrap().clone() {
                return Ok(default);
            }
            return Err(TopologyError::InvalidModel(
                "inherit (no parent or default backend)".into(),
            ));
        }
        if self.gateway.has_backend(model_name) {
            Ok(model_name.to_string())
        } else {
            Err(TopologyError::InvalidModel(model_name.to_string()))
        }
    }

    /// Resolve a tools_list into a frozen scope: built-in names, names from
    /// the parent's scope, or registry paths.
    fn resolve_scope(
        &self,
        tools_list: &[String],
        parent_scope: Option<&ToolScope>,
    ) -> Result<ToolScope, TopologyError> {
        let mut scope = ToolScope::default();
        for entry in tools_list {
            if scope.entries.iter().any(|e| e.name() == entry) {
                continue;
            }
            if let Some(summary) = builtin_summary(entry) {
                scope.entries.push(ScopeEntry::Builtin { summary });
                continue;
            }
            if let Some(parent_entry) =
                parent_scope.and_then(|scope| scope.resolve_name(entry).cloned())
            {
                scope.entries.push(parent_entry);
                continue;
            }
            let id = ToolId(entry.clone());
            match self.registry.describe_tool(&id) {
                Ok(manifest) => scope.push_registry(id.clone(), manifest.summary(&id)),
                Err(_) => return Err(TopologyError::UnresolvableTool(entry.clone())),
            }
        }
        Ok(scope)
    }

    /// Register an agent spec in the pool, resolving its scope against the
    /// built-in set and the registry. Used at boot and by operators.
    pub fn install_agent(&self, created_by: &str, spec: AgentSpec) -> Result<String, KernelError> {
        if spec.model_name != INHERIT_BACKEND && !self.gateway.has_backend(&spec.model_name) {
            return Err(TopologyError::InvalidModel(spec.model_name.clone()).into());
        }
        let scope = self.resolve_scope(&spec.tools_list, None)?;
        let name = spec.agent_name.clone();
        self.pool.register(AgentPoolEntry {
            spec,
            created_by: created_by.to_string(),
            created_at: self.tick.fetch_add(1, Ordering::SeqCst),
            invocation_count: 0,
            scope,
            initial_context: None,
        })?;
        Ok(name)
    }

    /// Create an agent on behalf of a running parent: resolves tools against
    /// the parent scope, validates the model, and captures the parent-run
    /// summary when the agent spec asks for it.
    fn create_agent_from(&self, ctx: &RunCtx<'_>, spec: AgentSpec) -> Result<String, KernelError> {
        if self.pool.contains(&spec.agent_name) {
            return Err(TopologyError::DuplicateAgentName(spec.agent_name).into());
        }
        if spec.model_name != INHERIT_BACKEND && !self.gateway.has_backend(&spec.model_name) {
            return Err(TopologyError::InvalidModel(spec.model_name.clone()).into());
        }
        let scope = self.resolve_scope(&spec.tools_list, Some(&ctx.scope))?;

        let initial_context = if spec.initial_memory == InitialMemory::ParentSummary {
            let history = ctx.graph.assemble_history(ctx.run_id)?;
            if history.is_empty() {
                None
            } else {
                let mut request =
                    ModelRequest::new(ctx.agent_instance.clone(), SUMMARIZER_INSTRUCTION);
                request.history = history;
                let response = self.gateway.complete(&ctx.backend_id, &request)?;
                match response {
                    ModelResponse::Text { text } => Some(text),
                    ModelResponse::ToolCall { .. } => {
                        return Err(KernelError::Protocol(
                            "summarization completion returned a tool call".into(),
                        ))
                    }
                }
            }
        } else {
            None
        };

        let name = spec.agent_name.clone();
        self.pool.register(AgentPoolEntry {
            spec,
            created_by: ctx.agent_instance.clone(),
            created_at: self.tick.fetch_add(1, Ordering::SeqCst),
            invocation_count: 0,
            scope,
            initial_context,
        })?;
        Ok(name)
    }

    /// Summarize everything older than the `keep_recent` most recent events
    /// of a run with one completion, recording a SummaryEvent.
    pub fn summarize_history(
        &self,
        graph: &StmGraph,
        run: NodeId,
        backend_id: &str,
        keep_recent: usize,
    ) -> Result<NodeId, KernelError> {
        let plan = graph.summary_plan(run, keep_recent)?;
        let mut request = ModelRequest::new(graph.agent_instance(run)?, SUMMARIZER_INSTRUCTION);
        request.history = plan.turns.clone();
        let response = self.gateway.complete(backend_id, &request)?;
        let text = match response {
            ModelResponse::Text { text } => text,
            ModelResponse::ToolCall { .. } => {
                return Err(KernelError::Protocol(
                    "summarization completion returned a tool call".into(),
                ))
            }
        };
        Ok(graph.apply_summary(&plan, &text)?)
    }

    /// Run a root agent to completion on the kernel's short-term graph.
    pub fn run_root(
        &self,
        spec: &AgentSpec,
        task: &str,
        limits: RunLimits,
    ) -> Result<RunResult, KernelError> {
        if limits.max_steps == 0 {
            return Err(KernelError::Protocol("max_steps must be at least 1".into()));
        }
        let backend_id = self.resolve_backend(&spec.model_name, None)?;
        let scope = self.resolve_scope(&spec.tools_list, None)?;
        self.run_agent(RunParams {
            spec,
            task,
            parent_event: None,
            backend_id,
            scope,
            max_steps: limits.max_steps,
            board: None,
            graph: &self.stm,
            initial_context: None,
            peer_note: None,
            is_clone: false,
        })
    }

    /// Call a pooled agent by name. The public entry point used by tests and
    /// the CLI; model-initiated calls flow through tool dispatch.
    pub fn call_agent(
        &self,
        agent_name: &str,
        task_message: &str,
        max_steps: u64,
    ) -> Result<AgentResponse, KernelError> {
        self.call_agent_inner(&self.stm, None, None, agent_name, task_message, max_steps)
    }

    fn call_agent_inner(
        &self,
        graph: &StmGraph,
        parent_event: Option<NodeId>,
        inherited_backend: Option<&str>,
        agent_name: &str,
        task_message: &str,
        max_steps: u64,
    ) -> Result<AgentResponse, KernelError> {
        // The memory agent runs on a detached graph: its loop must never
        // mutate the shared short-term record.
        if agent_name == MEMORY_AGENT_NAME {
            let (private_graph, outcome) =
                self.run_memory_agent_clone(task_message, inherited_backend, max_steps)?;
            return match outcome {
                Ok(result) => {
                    let observations = tool_observations(&private_graph, result.run_id)?;
                    Ok(AgentResponse::success(
                        agent_name,
                        &result.final_text,
                        observations,
                    ))
                }
                Err(err) => Err(TopologyError::SubAgentError(err.to_string()).into()),
            };
        }

        let entry = self.pool.get(agent_name)?;
        let backend_id = self.resolve_backend(&entry.spec.model_name, inherited_backend)?;
        let outcome = self.run_agent(RunParams {
            spec: &entry.spec,
            task: task_message,
            parent_event,
            backend_id,
            scope: entry.scope.clone(),
            max_steps,
            board: None,
            graph,
            initial_context: entry.initial_context.clone(),
            peer_note: None,
            is_clone: true,
        });
        self.pool.record_invocation(agent_name);

        match outcome {
            Ok(result) => {
                let observations = tool_observations(graph, result.run_id)?;
                Ok(AgentResponse::success(
                    agent_name,
                    &result.final_text,
                    observations,
                ))
            }
            Err(err) => Err(TopologyError::SubAgentError(err.to_string()).into()),
        }
    }

    /// Run one memory-agent clone on a detached short-term graph, returning
    /// the graph so callers can inspect which memory tools were invoked.
    pub(crate) fn run_memory_agent_clone(
        &self,
        task: &str,
        inherited_backend: Option<&str>,
        max_steps: u64,
    ) -> Result<(StmGraph, Result<RunResult, KernelError>), KernelError> {
        let entry = self.pool.get(MEMORY_AGENT_NAME)?;
        let backend_id = self.resolve_backend(&entry.spec.model_name, inherited_backend)?;
        let graph = StmGraph::new(self.config.truncation_limit_bytes);
        let outcome = self.run_agent(RunParams {
            spec: &entry.spec,
            task,
            parent_event: None,
            backend_id,
            scope: entry.scope.clone(),
            max_steps,
            board: None,
            graph: &graph,
            initial_context: None,
            peer_note: None,
            is_clone: true,
        });
        self.pool.record_invocation(MEMORY_AGENT_NAME);
        Ok((graph, outcome))
    }

    /// The agent loop: alternate completions and tool executions, recording
    /// every step, until a final text turn or the step limit.
    fn run_agent(&self, params: RunParams<'_>) -> Result<RunResult, KernelError> {
        let spec_snapshot = serde_json::to_value(params.spec).unwrap_or(Value::Null);
        let run_id =
            params
                .graph
                .open_agent_run(params.parent_event, spec_snapshot, params.task)?;
        let agent_instance = params.graph.agent_instance(run_id)?;

        let _clone_guard = params
            .is_clone
            .then(|| CloneGuard::enter(&self.live_clones));

        if let Some(board) = &params.board {
            board.join(&agent_instance);
        }
        if let Some(context) = &params.initial_context {
            params.graph.append_event(
                run_id,
                EventPayload::Context {
                    text: context.clone(),
                },
                None,
            )?;
        }

        let mut system_instruction = params.spec.instruction.clone();
        if let Some(peers) = &params.peer_note {
            system_instruction.push_str("\n\n");
            system_instruction.push_str(peers);
        }
        if let Ok(index) = self.registry.load_root_index() {
            if !index.is_empty() {
                system_instruction.push_str("\n\nTool registry top-level categories:");
                for category in &index {
                    system_instruction
                        .push_str(&format!("\n- {}: {}", category.path, category.summary));
                }
            }
        }
        system_instruction.push_str(&format!("\n\nTask: {}", params.task));

        let mut ctx = RunCtx {
            run_id,
            agent_instance: agent_instance.clone(),
            backend_id: params.backend_id.clone(),
            scope: params.scope,
            board: params.board.clone(),
            graph: params.graph,
            current_event: 0,
            max_steps: params.max_steps,
        };

        let mut steps = 0u64;
        loop {
            if steps >= params.max_steps {
                params.graph.close_run(
                    run_id,
                    RunStatus::Failed,
                    None,
                    Some(format!("step limit {} reached", params.max_steps)),
                )?;
                return Err(TopologyError::StepLimitExceeded(params.max_steps).into());
            }

            let mut history = params.graph.assemble_history(run_id)?;
            if history_token_estimate(&history) > self.config.summarization_threshold_tokens {
                match self.summarize_history(
                    params.graph,
                    run_id,
                    &ctx.backend_id,
                    self.config.keep_recent_events,
                ) {
                    Ok(_) => history = params.graph.assemble_history(run_id)?,
                    Err(KernelError::Stm(StmError::NothingToSummarize(_))) => {}
                    Err(err) => {
                        params.graph.close_run(
                            run_id,
                            RunStatus::Failed,
                            None,
                            Some(err.to_string()),
                        )?;
                        return Err(err);
                    }
                }
            }

            let mut request = ModelRequest::new(agent_instance.clone(), system_instruction.clone());
            request.history = history;
            request.available_tools = ctx.scope.summaries();

            let response = match self.gateway.complete(&ctx.backend_id, &request) {
                Ok(response) => response,
                Err(err) => {
                    params.graph.close_run(
                        run_id,
                        RunStatus::Failed,
                        None,
                        Some(err.to_string()),
                    )?;
                    return Err(err.into());
                }
            };
            steps += 1;

            match response {
                ModelResponse::Text { text } => {
                    params.graph.append_event(
                        run_id,
                        EventPayload::Text { text: text.clone() },
                        None,
                    )?;
                    params.graph.close_run(
                        run_id,
                        RunStatus::Succeeded,
                        Some(text.clone()),
                        None,
                    )?;
                    return Ok(RunResult {
                        run_id,
                        final_text: text,
                        event_count: params.graph.event_count(run_id)?,
                    });
                }
                ModelResponse::ToolCall { tool_call } => {
                    // Record the call first so spawned child runs can link to it.
                    let event_id = params.graph.append_event(
                        run_id,
                        EventPayload::ToolCall {
                            tool_name: tool_call.tool_name.clone(),
                            args: tool_call.args.clone(),
                            response: Value::Null,
                            is_error: false,
                            truncated: false,
                        },
                        None,
                    )?;
                    ctx.current_event = event_id;

                    let (mut doc, raw) =
                        self.dispatch_tool(&mut ctx, &tool_call.tool_name, &tool_call.args);

                    // Piggyback board diffs onto every tool response of a member.
                    if let Some(board) = &ctx.board {
                        if let Ok(diffs) = board.drain(&agent_instance) {
                            if !diffs.is_empty() {
                                doc["board_messages"] =
                                    serde_json::to_value(diffs).unwrap_or(Value::Null);
                            }
                        }
                    }

                    let is_error = doc_is_error(&doc);
                    params
                        .graph
                        .set_event_response(event_id, doc, is_error, raw)?;
                }
            }
        }
    }

    /// Execute one model-requested tool call. Failures become structured
    /// error documents fed back to the model, never run-fatal.
    fn dispatch_tool(
        &self,
        ctx: &mut RunCtx<'_>,
        tool_name: &str,
        args: &Value,
    ) -> (Value, Option<Vec<u8>>) {
        let Some(entry) = ctx.scope.resolve_name(tool_name).cloned() else {
            return (
                error_doc(format!(
                    "Tool '{tool_name}' not found. It is not available in this agent's tool scope."
                )),
                None,
            );
        };
        match entry {
            ScopeEntry::Builtin { .. } => match self.dispatch_builtin(ctx, tool_name, args) {
                Ok((doc, raw)) => (doc, raw),
                Err(err) => (error_doc(err.to_string()), None),
            },
            ScopeEntry::Registry { id, .. } => match self.invoke_registry_tool(ctx, &id, args) {
                Ok((doc, raw)) => (doc, raw),
                Err(err) => (error_doc(err.to_string()), None),
            },
        }
    }

    /// Resolve the tool's environment to its per-toolset sandbox, provisioning
    /// (or restoring from snapshot) on first use.
    fn sandbox_for_env(&self, env_id: &str) -> Result<SandboxId, KernelError> {
        let mut sandboxes = self.tool_sandboxes.lock().unwrap();
        if let Some(id) = sandboxes.get(env_id) {
            return Ok(id.clone());
        }
        let spec = self
            .envs
            .read()
            .unwrap()
            .get(env_id)
            .cloned()
            .ok_or_else(|| {
                KernelError::Protocol(format!("environment '{env_id}' is not declared"))
            })?;
        let id = self.sandboxes.provision(&spec)?;
        sandboxes.insert(env_id.to_string(), id.clone());
        Ok(id)
    }

    fn invoke_registry_tool(
        &self,
        ctx: &mut RunCtx<'_>,
        id: &ToolId,
        args: &Value,
    ) -> Result<(Value, Option<Vec<u8>>), KernelError> {
        let manifest = self.registry.describe_tool(id)?;
        let env_id = manifest.environment.as_deref().unwrap_or("default");
        let sandbox = self.sandbox_for_env(env_id)?;
        let outcome = self.registry.invoke_tool(
            &ctx.scope,
            id,
            args,
            InvokeMode::Sync,
            &self.sandboxes,
            &sandbox,
            self.config.truncation_limit_bytes,
        )?;
        Ok(match outcome {
            ToolInvocation::Completed(result) => tool_result_doc(&result),
            ToolInvocation::Background(handle) => (
                json!({
                    "status": "offloaded",
                    "handle_id": handle.handle_id,
                    "state": "running",
                }),
                None,
            ),
        })
    }

    fn dispatch_builtin(
        &self,
        ctx: &mut RunCtx<'_>,
        name: &str,
        args: &Value,
    ) -> Result<(Value, Option<Vec<u8>>), KernelError> {
        match name {
            "create_agent" => {
                let spec: AgentSpec = parse_args(args)?;
                let created = self.create_agent_from(ctx, spec)?;
                Ok((json!({"status": "created", "agent_name": created}), None))
            }
            "list_agents" => {
                #[derive(Deserialize)]
                struct A {
                    #[serde(default)]
                    filter: Option<String>,
                }
                let a: A = parse_args(args)?;
                Ok((self.pool.list(a.filter.as_deref()).to_doc(), None))
            }
            "call_agent" => {
                #[derive(Deserialize)]
                struct A {
                    agent_name: String,
                    #[serde(default)]
                    task_message: String,
                }
                let a: A = parse_args(args)?;
                let result = self.call_agent_inner(
                    ctx.graph,
                    Some(ctx.current_event),
                    Some(&ctx.backend_id),
                    &a.agent_name,
                    &a.task_message,
                    ctx.max_steps,
                );
                Ok(match result {
                    Ok(response) => (response.to_doc(), None),
                    Err(KernelError::Topology(TopologyError::AgentNotFound(missing))) => {
                        (AgentResponse::not_found_doc(&missing), None)
                    }
                    Err(err) => (
                        AgentResponse::run_failure(&a.agent_name, &err.to_string()).to_doc(),
                        None,
                    ),
                })
            }
            "run_ensemble" => {
                let request: EnsembleRequest = parse_args(args)?;
                let doc = self.run_ensemble_inner(
                    ctx.graph,
                    Some(ctx.current_event),
                    &ctx.backend_id,
                    &request,
                    ctx.max_steps,
                )?;
                Ok((doc, None))
            }
            "post_message" => {
                #[derive(Deserialize)]
                struct A {
                    text: String,
                }
                let a: A = parse_args(args)?;
                let board = ctx.board.as_ref().ok_or_else(|| {
                    KernelError::Protocol("this agent is not a message board member".into())
                })?;
                let seq = board.post(&ctx.agent_instance, &a.text)?;
                Ok((json!({"seq": seq}), None))
            }
            "search_tools" => {
                #[derive(Deserialize)]
                struct A {
                    keyword: String,
                }
                let a: A = parse_args(args)?;
                let hits = self.registry.search_tools(&a.keyword);
                let results: Vec<Value> = hits
                    .iter()
                    .map(|(id, description)| json!({"path": id.0, "description": description}))
                    .collect();
                Ok((json!({"total": results.len(), "results": results}), None))
            }
            "expand_category" => {
                #[derive(Deserialize)]
                struct A {
                    path: String,
                }
                let a: A = parse_args(args)?;
                let expansion = self.registry.expand_category(&a.path)?;
                Ok((
                    serde_json::to_value(&expansion).unwrap_or(Value::Null),
                    None,
                ))
            }
            "describe_tool" => {
                #[derive(Deserialize)]
                struct A {
                    path: String,
                }
                let a: A = parse_args(args)?;
                let manifest = self.registry.describe_tool(&ToolId(a.path.clone()))?;
                let mut doc = serde_json::to_value(&manifest).unwrap_or(Value::Null);
                doc["path"] = json!(a.path);
                Ok((doc, None))
            }
            "create_tool" => {
                #[derive(Deserialize)]
                struct A {
                    category: String,
                    manifest: Value,
                    implementation: String,
                }
                let a: A = parse_args(args)?;
                let manifest: crate::tools::ToolManifest = serde_json::from_value(a.manifest)
                    .map_err(|e| {
                        KernelError::Tool(ToolError::InvalidManifest {
                            field: "<manifest>".into(),
                            reason: e.to_string(),
                        })
                    })?;
                let id = self.registry.create_tool(
                    &ctx.agent_instance,
                    &a.category,
                    &manifest,
                    &a.implementation,
                )?;
                // The author gains immediate access to its new tool.
                ctx.scope.push_registry(id.clone(), manifest.summary(&id));
                Ok((json!({"status": "created", "path": id.0}), None))
            }
            "modify_tool" => {
                #[derive(Deserialize)]
                struct A {
                    path: String,
                    #[serde(default)]
                    manifest: Option<Value>,
                    #[serde(default)]
                    implementation: Option<String>,
                }
                let a: A = parse_args(args)?;
                let manifest = a
                    .manifest
                    .map(serde_json::from_value::<crate::tools::ToolManifest>)
                    .transpose()
                    .map_err(|e| {
                        KernelError::Tool(ToolError::InvalidManifest {
                            field: "<manifest>".into(),
                            reason: e.to_string(),
                        })
                    })?;
                self.registry.modify_tool(
                    &ctx.agent_instance,
                    &ToolId(a.path.clone()),
                    manifest.as_ref(),
                    a.implementation.as_deref(),
                )?;
                Ok((json!({"status": "modified", "path": a.path}), None))
            }
            "poll_invocation" => {
                let handle = parse_handle(args)?;
                let state = self.sandboxes.poll(&handle)?;
                Ok((json!({"handle_id": handle.handle_id, "state": state}), None))
            }
            "fetch_invocation" => {
                let handle = parse_handle(args)?;
                let result = self.sandboxes.fetch_result(&handle)?;
                let tool_result =
                    ToolResult::from_exec(&result, self.config.truncation_limit_bytes);
                Ok(tool_result_doc(&tool_result))
            }
            "terminate_invocation" => {
                let handle = parse_handle(args)?;
                self.sandboxes.terminate(&handle)?;
                let state = self.sandboxes.poll(&handle)?;
                Ok((json!({"handle_id": handle.handle_id, "state": state}), None))
            }
            "list_agent_runs" => {
                let filter: RunFilter = parse_args(args)?;
                let runs = self.stm.list_agent_runs(&filter);
                Ok((
                    json!({
                        "total": runs.len(),
                        "runs": serde_json::to_value(&runs).unwrap_or(Value::Null),
                    }),
                    None,
                ))
            }
            "inspect_events" => {
                #[derive(Deserialize)]
                struct A {
                    run: NodeId,
                    #[serde(default)]
                    first: Option<u64>,
                    #[serde(default)]
                    last: Option<u64>,
                }
                let a: A = parse_args(args)?;
                let range = match (a.first, a.last) {
                    (None, None) => None,
                    (first, last) => Some((first.unwrap_or(1), last.unwrap_or(u64::MAX))),
                };
                let events = self.stm.inspect_events(a.run, range)?;
                Ok((json!({"total": events.len(), "events": events}), None))
            }
            "recover_raw" => {
                #[derive(Deserialize)]
                struct A {
                    event: NodeId,
                }
                let a: A = parse_args(args)?;
                let bytes = self.stm.recover_raw(a.event)?;
                let doc = json!({
                    "event": a.event,
                    "byte_len": bytes.len(),
                    "text": String::from_utf8_lossy(&bytes),
                });
                Ok((doc, Some(bytes)))
            }
            "graph_query" => {
                #[derive(Deserialize)]
                struct A {
                    pattern: Value,
                }
                let a: A = parse_args(args)?;
                let pattern: GraphPattern = serde_json::from_value(a.pattern)
                    .map_err(|e| KernelError::Stm(StmError::MalformedPattern(e.to_string())))?;
                let bindings = self.stm.graph_query(&pattern)?;
                Ok((
                    json!({
                        "total": bindings.len(),
                        "bindings": serde_json::to_value(&bindings).unwrap_or(Value::Null),
                    }),
                    None,
                ))
            }
            "create_node" => {
                #[derive(Deserialize)]
                struct A {
                    node_type: String,
                    label: String,
                    content: String,
                }
                let a: A = parse_args(args)?;
                let node_id = self.ltm.create_node(&a.node_type, &a.label, &a.content)?;
                Ok((json!({"status": "stored", "node_id": node_id}), None))
            }
            "create_edge" => {
                #[derive(Deserialize)]
                struct A {
                    src: u64,
                    dst: u64,
                    edge_type: String,
                }
                let a: A = parse_args(args)?;
                let edge_id = self.ltm.create_edge(a.src, a.dst, &a.edge_type)?;
                Ok((json!({"status": "stored", "edge_id": edge_id}), None))
            }
            "list_schema" => {
                let catalog = self.ltm.list_schema();
                Ok((serde_json::to_value(&catalog).unwrap_or(Value::Null), None))
            }
            "search_nodes" => {
                #[derive(Deserialize)]
                struct A {
                    node_type: String,
                    query_label: String,
                    #[serde(default = "default_top_n")]
                    top_n: usize,
                }
                fn default_top_n() -> usize {
                    5
                }
                let a: A = parse_args(args)?;
                let hits = self.ltm.search_nodes(&RetrievalQuery {
                    node_type: a.node_type,
                    query_label: a.query_label,
                    top_n: a.top_n,
                })?;
                let results: Vec<Value> = hits
                    .iter()
                    .map(|hit| {
                        json!({
                            "node_id": hit.node.node_id,
                            "node_type": hit.node.node_type,
                            "label": hit.node.label,
                            "content": hit.node.content,
                            "score": hit.score,
                            "one_hop": {
                                "neighbors": hit.one_hop.neighbors.iter().map(|n| json!({
                                    "node_id": n.node_id,
                                    "node_type": n.node_type,
                                    "label": n.label,
                                })).collect::<Vec<_>>(),
                                "edges": serde_json::to_value(&hit.one_hop.edges).unwrap_or(Value::Null),
                            },
                        })
                    })
                    .collect();
                Ok((
                    json!({
                        "found": !results.is_empty(),
                        "total_found": results.len(),
                        "results": results,
                    }),
                    None,
                ))
            }
            "grep_nodes" => {
                #[derive(Deserialize)]
                struct A {
                    pattern: String,
                }
                let a: A = parse_args(args)?;
                let nodes = self.ltm.grep_nodes(&a.pattern)?;
                let results: Vec<Value> = nodes
                    .iter()
                    .map(|n| {
                        json!({
                            "node_id": n.node_id,
                            "node_type": n.node_type,
                            "label": n.label,
                            "content": n.content,
                        })
                    })
                    .collect();
                Ok((
                    json!({
                        "found": !results.is_empty(),
                        "total_found": results.len(),
                        "results": results,
                    }),
                    None,
                ))
            }
            "update_node" => {
                #[derive(Deserialize)]
                struct A {
                    node_id: u64,
                    #[serde(default)]
                    new_label: Option<String>,
                    #[serde(default)]
                    new_content: Option<String>,
                }
                let a: A = parse_args(args)?;
                self.ltm.update_node(
                    a.node_id,
                    a.new_label.as_deref(),
                    a.new_content.as_deref(),
                )?;
                Ok((json!({"status": "updated", "node_id": a.node_id}), None))
            }
            "delete_node" => {
                #[derive(Deserialize)]
                struct A {
                    node_id: u64,
                }
                let a: A = parse_args(args)?;
                self.ltm.delete_node(a.node_id)?;
                Ok((json!({"status": "deleted", "node_id": a.node_id}), None))
            }
            other => Err(KernelError::Protocol(format!(
                "built-in tool '{other}' has no handler"
            ))),
        }
    }

    /// Clone every member, run them concurrently on the shared task with a
    /// message board, then summarize all member responses with one
    /// completion on the caller's backend.
    fn run_ensemble_inner(
        &self,
        graph: &StmGraph,
        parent_event: Option<NodeId>,
        caller_backend: &str,
        request: &EnsembleRequest,
        max_steps: u64,
    ) -> Result<Value, KernelError> {
        if request.members.is_empty() {
            return Err(TopologyError::InvalidEnsemble("members must be non-empty".into()).into());
        }
        if request.aggregation != "summarize" {
            return Err(TopologyError::InvalidEnsemble(format!(
                "unknown aggregation strategy '{}'",
                request.aggregation
            ))
            .into());
        }
        // Detect missing members before any clone launches.
        let mut entries = Vec::new();
        for member in &request.members {
            entries.push(self.pool.get(&member.agent_name)?);
        }

        let board_id = format!("board-{}", self.next_board.fetch_add(1, Ordering::SeqCst));
        let board = Arc::new(Board::create(
            &self.config.workspace.join("boards"),
            &board_id,
        )?);
        self.boards.insert(board.clone());

        let peer_rosters: Vec<String> = request
            .members
            .iter()
            .map(|member| {
                let mut note = String::from(
                    "You are part of a parallel ensemble working on the same task. \
                     Peer agents working alongside you:",
                );
                for (other, entry) in request.members.iter().zip(&entries) {
                    if other.agent_name != member.agent_name {
                        note.push_str(&format!(
                            "\n- {}: {}",
                            other.agent_name, entry.spec.description
                        ));
                    }
                }
                note.push_str(
                    "\nShare findings through the message board; peer messages arrive \
                     attached to your tool responses.",
                );
                note
            })
            .collect();

        struct MemberOutcome {
            agent_name: String,
            model_name: String,
            instance: Option<String>,
            final_text: Option<String>,
            error: Option<String>,
        }

        let outcomes: Vec<MemberOutcome> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for ((member, entry), peer_note) in
                request.members.iter().zip(&entries).zip(&peer_rosters)
            {
                let board = Arc::clone(&board);
                handles.push(scope.spawn(move || {
                    let mut spec = entry.spec.clone();
                    spec.model_name = member.model_name.clone();
                    let backend_id =
                        match self.resolve_backend(&spec.model_name, Some(caller_backend)) {
                            Ok(id) => id,
                            Err(err) => {
                                return MemberOutcome {
                                    agent_name: member.agent_name.clone(),
                                    model_name: member.model_name.clone(),
                                    instance: None,
                                    final_text: None,
                                    error: Some(err.to_string()),
                                }
                            }
                        };
                    let result = self.run_agent(RunParams {
                        spec: &spec,
                        task: &request.task,
                        parent_event,
                        backend_id,
                        scope: entry.scope.clone(),
                        max_steps,
                        board: Some(board),
                        graph,
                        initial_context: entry.initial_context.clone(),
                        peer_note: Some(peer_note.clone()),
                        is_clone: true,
                    });
                    self.pool.record_invocation(&member.agent_name);
                    match result {
                        Ok(run) => MemberOutcome {
                            agent_name: member.agent_name.clone(),
                            model_name: member.model_name.clone(),
                            instance: graph.agent_instance(run.run_id).ok(),
                            final_text: Some(run.final_text),
                            error: None,
                        },
                        Err(err) => MemberOutcome {
                            agent_name: member.agent_name.clone(),
                            model_name: member.model_name.clone(),
                            instance: None,
                            final_text: None,
                            error: Some(err.to_string()),
                        },
                    }
                }));
            }
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });

        // Final drain per member after all members finished, then close.
        let mut final_diffs: Vec<Vec<BoardMessage>> = Vec::new();
        for outcome in &outcomes {
            let diffs = outcome
                .instance
                .as_ref()
                .and_then(|instance| board.drain(instance).ok())
                .unwrap_or_default();
            final_diffs.push(diffs);
        }
        board.close();

        // One summarization completion over all member outputs.
        let mut summary_request = ModelRequest::new("ensemble", ENSEMBLE_SUMMARY_INSTRUCTION);
        for outcome in &outcomes {
            let text = match (&outcome.final_text, &outcome.error) {
                (Some(text), _) => format!("Member {} responded: {text}", outcome.agent_name),
                (None, Some(error)) => {
                    format!("Member {} failed: {error}", outcome.agent_name)
                }
                (None, None) => format!("Member {} produced no output", outcome.agent_name),
            };
            summary_request.push_turn(crate::gateway::TurnKind::Context { text });
        }
        let summary = match self.gateway.complete(caller_backend, &summary_request)? {
            ModelResponse::Text { text } => text,
            ModelResponse::ToolCall { .. } => {
                return Err(KernelError::Protocol(
                    "ensemble summary completion returned a tool call".into(),
                ))
            }
        };

        let members: Vec<Value> = outcomes
            .iter()
            .zip(&final_diffs)
            .map(|(outcome, diffs)| {
                let mut doc = json!({
                    "agent_name": outcome.agent_name,
                    "model_name": outcome.model_name,
                    "status": if outcome.error.is_none() { "success" } else { "failed" },
                });
                if let Some(text) = &outcome.final_text {
                    doc["response"] = json!(text);
                }
                if let Some(error) = &outcome.error {
                    doc["error"] = json!(error);
                }
                if !diffs.is_empty() {
                    doc["board_messages"] = serde_json::to_value(diffs).unwrap_or(Value::Null);
                }
                doc
            })
            .collect();

        Ok(json!({
            "task": request.task,
            "board": board_id,
            "summary": summary,
            "members": members,
        }))
    }

    /// Public ensemble entry point (models reach it through tool dispatch).
    pub fn run_ensemble(
        &self,
        caller_backend: &str,
        request: &EnsembleRequest,
        max_steps: u64,
    ) -> Result<Value, KernelError> {
        self.run_ensemble_inner(&self.stm, None, caller_backend, request, max_steps)
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct EnsembleMember {
    pub agent_name: String,
    #[serde(default = "inherit_model")]
    pub model_name: String,
}

fn inherit_model() -> String {
    INHERIT_BACKEND.to_string()
}

#[derive(Debug, Clone, Deserialize)]
pub struct EnsembleRequest {
    pub task: String,
    pub members: Vec<EnsembleMember>,
    #[serde(default = "default_aggregation")]
    pub aggregation: String,
}

fn default_aggregation() -> String {
    "summarize".to_string()
}

impl EnsembleRequest {
    pub fn new(task: &str, members: &[(&str, &str)]) -> Self {
        Self {
            task: task.to_string(),
            members: members
                .iter()
                .map(|(agent_name, model_name)| EnsembleMember {
                    agent_name: agent_name.to_string(),
                    model_name: model_name.to_string(),
                })
                .collect(),
            aggregation: default_aggregation(),
        }
    }
}

fn parse_args<T: serde::de::DeserializeOwned>(args: &Value) -> Result<T, KernelError> {
    let value = if args.is_null() {
        json!({})
    } else {
        args.clone()
    };
    serde_json::from_value(value)
        .map_err(|e| KernelError::Protocol(format!("invalid tool arguments: {e}")))
}

fn parse_handle(args: &Value) -> Result<InvocationHandle, KernelError> {
    #[derive(Deserialize)]
    struct A {
        handle_id: String,
    }
    let a: A = parse_args(args)?;
    Ok(InvocationHandle {
        handle_id: a.handle_id,
    })
}

fn tool_result_doc(result: &ToolResult) -> (Value, Option<Vec<u8>>) {
    let mut doc = json!({
        "exit_status": result.exit_status,
        "output": result.output,
        "truncated": result.truncated,
    });
    if result.exit_status != 0 {
        doc["status"] = json!("failed");
        doc["error"] = json!(format!("tool exited with status {}", result.exit_status));
    }
    (doc, result.raw_output.clone())
}

/// One observation line per tool event of a finished run.
fn tool_observations(graph: &StmGraph, run_id: NodeId) -> Result<Vec<String>, KernelError> {
    let events = graph.inspect_events(run_id, None)?;
    Ok(events
        .iter()
        .filter(|doc| doc.get("turn").and_then(Value::as_str) == Some("tool_call"))
        .map(|doc| {
            let tool = doc.get("tool_name").and_then(Value::as_str).unwrap_or("?");
            let outcome = if doc
                .get("is_error")
                .and_then(Value::as_bool)
                .unwrap_or(false)
            {
                "error"
            } else {
                "ok"
            };
            format!("{tool}: {outcome}")
        })
        .collect())
}
