//! Short-term memory: a per-kernel execution graph recording agent runs,
//! step events, raw tool outputs, and summary events, with retrieval and
//! pattern-query operations.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{estimate_tokens, Turn, TurnKind};

pub type NodeId = u64;

#[derive(Debug, Error)]
pub enum StmError {
    #[error("unknown run node {0}")]
    UnknownRun(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not a valid spawn parent (must be a create/call/ensemble tool event)")]
    InvalidParent(NodeId),
    #[error("run {0} is closed")]
    RunClosed(NodeId),
    #[error("nothing to summarize for run {0}")]
    NothingToSummarize(NodeId),
    #[error("event {0} has no raw attachment")]
    NoRawAttachment(NodeId),
    #[error("malformed graph pattern: {0}")]
    MalformedPattern(String),
    #[error("export io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StmNodeKind {
    AgentRun,
    Event,
    RawToolResponse,
    SummaryEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StmEdgeKind {
    Emits,
    Spawns,
    RawOf,
    Summarizes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StmEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: StmEdgeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

/// Payload of one step event. A tool call and the response it produced are
/// recorded as a single event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "turn", rename_all = "snake_case")]
pub enum EventPayload {
    Text {
        text: String,
    },
    /// Kernel-provided context, e.g. the inherited parent summary.
    Context {
        text: String,
    },
    ToolCall {
        tool_name: String,
        args: Value,
        response: Value,
        #[serde(default)]
        is_error: bool,
        #[serde(default)]
        truncated: bool,
    },
}

#[derive(Debug, Clone)]
struct RunNode {
    agent_instance: String,
    agent_name: String,
    task: String,
    status: RunStatus,
    spec_snapshot: Value,
    final_text: Option<String>,
    error: Option<String>,
    parent_event: Option<NodeId>,
    events: Vec<NodeId>,
    summaries: Vec<NodeId>,
    covered: HashSet<NodeId>,
}

#[derive(Debug, Clone)]
struct EventNode {
    run: NodeId,
    index: u64,
    payload: EventPayload,
    raw: Option<NodeId>,
}

#[derive(Debug, Clone)]
struct RawNode {
    event: NodeId,
    bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
struct SummaryNode {
    run: NodeId,
    text: String,
    covers: (u64, u64),
}

#[derive(Debug, Clone)]
enum NodeData {
    Run(RunNode),
    Event(EventNode),
    Raw(RawNode),
    Summary(SummaryNode),
}

impl NodeData {
    fn kind(&self) -> StmNodeKind {
        match self {
            NodeData::Run(_) => StmNodeKind::AgentRun,
            NodeData::Event(_) => StmNodeKind::Event,
            NodeData::Raw(_) => StmNodeKind::RawToolResponse,
            NodeData::Summary(_) => StmNodeKind::SummaryEvent,
        }
    }

    fn payload_doc(&self) -> Value {
        match self {
            NodeData::Run(run) => {
                let mut doc = json!({
                    "agent_id": run.agent_instance,
                    "agent_name": run.agent_name,
                    "task": run.task,
                    "status": run.status,
                    "spec_snapshot": run.spec_snapshot,
                });
                if let Some(text) = &run.final_text {
                    doc["final_text"] = json!(text);
                }
                if let Some(error) = &run.error {
                    doc["error"] = json!(error);
                }
                doc
            }
            NodeData::Event(event) => {
                let mut doc = serde_json::to_value(&event.payload).unwrap_or(Value::Null);
                doc["index"] = json!(event.index);
                doc
            }
            NodeData::Raw(raw) => json!({
                "event": raw.event,
                "byte_len": raw.bytes.len(),
                "sha256": format!("{:x}", Sha256::digest(&raw.bytes)),
            }),
            NodeData::Summary(summary) => json!({
                "run": summary.run,
                "text": summary.text,
                "covers": [summary.covers.0, summary.covers.1],
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: NodeId,
    pub agent_id: String,
    pub agent_name: String,
    pub status: RunStatus,
    pub parent_run: Option<NodeId>,
    pub event_count: usize,
    pub summary_count: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunFilter {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub status: Option<RunStatus>,
}

/// A span of events selected for one summarization pass.
#[derive(Debug, Clone)]
pub struct SummaryPlan {
    pub run: NodeId,
    pub event_ids: Vec<NodeId>,
    pub covers: (u64, u64),
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphPattern {
    #[serde(default)]
    pub node_kind: Option<StmNodeKind>,
    /// (payload key, substring) filters over the rendered payload document.
    #[serde(default)]
    pub payload_contains: Vec<(String, String)>,
    #[serde(default)]
    pub walk: Option<EdgeWalk>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeWalk {
    pub edge_kinds: Vec<StmEdgeKind>,
    pub min_hops: u64,
    pub max_hops: u64,
    #[serde(default)]
    pub target_kind: Option<StmNodeKind>,
}

const MAX_WALK_HOPS: u64 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueryBinding {
    pub start: NodeId,
    pub end: NodeId,
    pub path: Vec<NodeId>,
}

#[derive(Default)]
struct GraphInner {
    nodes: BTreeMap<NodeId, NodeData>,
    edges: Vec<StmEdge>,
    next_id: NodeId,
}

impl GraphInner {
    fn alloc(&mut self) -> NodeId {
        self.next_id += 1;
        self.next_id
    }

    fn run(&self, id: NodeId) -> Result<&RunNode, StmError> {
        match self.nodes.get(&id) {
            Some(NodeData::Run(run)) => Ok(run),
            _ => Err(StmError::UnknownRun(id)),
        }
    }

    fn run_mut(&mut self, id: NodeId) -> Result<&mut RunNode, StmError> {
        match self.nodes.get_mut(&id) {
            Some(NodeData::Run(run)) => Ok(run),
            _ => Err(StmError::UnknownRun(id)),
        }
    }

    fn event(&self, id: NodeId) -> Result<&EventNode, StmError> {
        match self.nodes.get(&id) {
            Some(NodeData::Event(event)) => Ok(event),
            _ => Err(StmError::UnknownNode(id)),
        }
    }
}

/// The execution graph. Single-writer appends per run, concurrent readers.
pub struct StmGraph {
    inner: RwLock<GraphInner>,
    truncation_limit: usize,
}

impl StmGraph {
    pub fn new(truncation_limit: usize) -> Self {
        Self {
            inner: RwLock::new(GraphInner::default()),
            truncation_limit,
        }
    }

    /// Open a new AgentRun node. `parent_event`, when present, must be a
    /// create/call/ensemble tool event; a spawns edge is added from it.
    pub fn open_agent_run(
        &self,
        parent_event: Option<NodeId>,
        spec_snapshot: Value,
        task: &str,
    ) -> Result<NodeId, StmError> {
        let mut inner = self.inner.write().unwrap();
        if let Some(parent) = parent_event {
            let event = inner
                .event(parent)
                .map_err(|_| StmError::InvalidParent(parent))?;
            match &event.payload {
                EventPayload::ToolCall { tool_name, .. }
                    if matches!(
                        tool_name.as_str(),
                        "create_agent" | "call_agent" | "run_ensemble"
                    ) => {}
                _ => return Err(StmError::InvalidParent(parent)),
            }
        }
        let agent_name = spec_snapshot
            .get("agent_name")
            .and_then(Value::as_str)
            .unwrap_or("anonymous")
            .to_string();
        let id = inner.alloc();
        let run = RunNode {
            agent_instance: format!("{agent_name}#{id}"),
            agent_name,
            task: task.to_string(),
            status: RunStatus::Running,
            spec_snapshot,
            final_text: None,
            error: None,
            parent_event,
            events: Vec::new(),
            summaries: Vec::new(),
            covered: HashSet::new(),
        };
        inner.nodes.insert(id, NodeData::Run(run));
        if let Some(parent) = parent_event {
            inner.edges.push(StmEdge {
                src: parent,
                dst: id,
                kind: StmEdgeKind::Spawns,
            });
        }
        Ok(id)
    }

    pub fn agent_instance(&self, run: NodeId) -> Result<String, StmError> {
        Ok(self.inner.read().unwrap().run(run)?.agent_instance.clone())
    }

    pub fn run_status(&self, run: NodeId) -> Result<RunStatus, StmError> {
        Ok(self.inner.read().unwrap().run(run)?.status)
    }

    pub fn event_count(&self, run: NodeId) -> Result<usize, StmError> {
        Ok(self.inner.read().unwrap().run(run)?.events.len())
    }

    /// Append the next event of an open run. Raw output larger than the
    /// truncation limit is preserved in full on a RawToolResponse node; the
    /// event itself keeps only the truncated form and a `truncated` flag.
    pub fn append_event(
        &self,
        run: NodeId,
        mut payload: EventPayload,
        raw_output: Option<Vec<u8>>,
    ) -> Result<NodeId, StmError> {
        let mut inner = self.inner.write().unwrap();
        let run_node = inner.run(run)?;
        if run_node.status != RunStatus::Running {
            return Err(StmError::RunClosed(run));
        }
        let index = run_node.events.len() as u64 + 1;

        let oversized = raw_output
            .as_ref()
            .map(|bytes| bytes.len() > self.truncation_limit)
            .unwrap_or(false);
        if oversized {
            if let EventPayload::ToolCall {
                response,
                truncated,
                ..
            } = &mut payload
            {
                *truncated = true;
                if let Value::String(text) = response {
                    if text.len() > self.truncation_limit {
                        let mut cut = self.truncation_limit;
                        while cut > 0 && !text.is_char_boundary(cut) {
                            cut -= 1;
                        }
                        text.truncate(cut);
                    }
                }
            }
        }

        let event_id = inner.alloc();
        inner.nodes.insert(
            event_id,
            NodeData::Event(EventNode {
                run,
                index,
                payload,
                raw: None,
            }),
        );
        inner.run_mut(run)?.events.push(event_id);
        inner.edges.push(StmEdge {
            src: run,
            dst: event_id,
            kind: StmEdgeKind::Emits,
        });

        if oversized {
            let raw_id = inner.alloc();
            inner.nodes.insert(
                raw_id,
                NodeData::Raw(RawNode {
                    event: event_id,
                    bytes: raw_output.unwrap(),
                }),
            );
            if let Some(NodeData::Event(event)) = inner.nodes.get_mut(&event_id) {
                event.raw = Some(raw_id);
            }
            inner.edges.push(StmEdge {
                src: event_id,
                dst: raw_id,
                kind: StmEdgeKind::RawOf,
            });
        }
        Ok(event_id)
    }

    /// Fill in the response of an in-flight tool event. The event is
    /// recorded before its tool executes so spawned child runs can link to
    /// it; this completes the record afterwards, with the same truncation
    /// and raw-attachment rules as `append_event`.
    pub fn set_event_response(
        &self,
        event: NodeId,
        response: Value,
        error: bool,
        raw_output: Option<Vec<u8>>,
    ) -> Result<(), StmError> {
        let mut inner = self.inner.write().unwrap();
        let limit = self.truncation_limit;
        let oversized = raw_output
            .as_ref()
            .map(|bytes| bytes.len() > limit)
            .unwrap_or(false);
        {
            let event_node = match inner.nodes.get_mut(&event) {
                Some(NodeData::Event(e)) => e,
                _ => return Err(StmError::UnknownNode(event)),
            };
            match &mut event_node.payload {
                EventPayload::ToolCall {
                    response: slot,
                    is_error,
                    truncated,
                    ..
                } => {
                    *slot = response;
                    *is_error = error;
                    if oversized {
                        *truncated = true;
                        if let Value::String(text) = slot {
                            if text.len() > limit {
                                let mut cut = limit;
                                while cut > 0 && !text.is_char_boundary(cut) {
                                    cut -= 1;
                                }
                                text.truncate(cut);
                            }
                        }
                    }
                }
                _ => return Err(StmError::UnknownNode(event)),
            }
        }
        if oversized {
            let raw_id = inner.alloc();
            inner.nodes.insert(
                raw_id,
                NodeData::Raw(RawNode {
                    event,
                    bytes: raw_output.unwrap(),
                }),
            );
            if let Some(NodeData::Event(event_node)) = inner.nodes.get_mut(&event) {
                event_node.raw = Some(raw_id);
            }
            inner.edges.push(StmEdge {
                src: event,
                dst: raw_id,
                kind: StmEdgeKind::RawOf,
            });
        }
        Ok(())
    }

    pub fn close_run(
        &self,
        run: NodeId,
        status: RunStatus,
        final_text: Option<String>,
        error: Option<String>,
    ) -> Result<(), StmError> {
        let mut inner = self.inner.write().unwrap();
        let run_node = inner.run_mut(run)?;
        run_node.status = status;
        run_node.final_text = final_text;
        run_node.error = error;
        Ok(())
    }

    /// Select the events a summarization pass would cover: everything older
    /// than the most recent `keep_recent` events that is not already covered.
    pub fn summary_plan(&self, run: NodeId, keep_recent: usize) -> Result<SummaryPlan, StmError> {
        let inner = self.inner.read().unwrap();
        let run_node = inner.run(run)?;
        if run_node.status != RunStatus::Running {
            return Err(StmError::RunClosed(run));
        }
        let total = run_node.events.len();
        let cutoff = total.saturating_sub(keep_recent);
        let mut event_ids = Vec::new();
        let mut turns = Vec::new();
        let mut covers = (u64::MAX, 0u64);
        for &event_id in &run_node.events[..cutoff] {
            if run_node.covered.contains(&event_id) {
                continue;
            }
            let event = inner.event(event_id)?;
            covers.0 = covers.0.min(event.index);
            covers.1 = covers.1.max(event.index);
            event_ids.push(event_id);
            turns.push(Turn {
                seq: turns.len() as u64 + 1,
                kind: payload_to_turn(&event.payload),
            });
        }
        if event_ids.is_empty() {
            return Err(StmError::NothingToSummarize(run));
        }
        Ok(SummaryPlan {
            run,
            event_ids,
            covers,
            turns,
        })
    }

    /// Record a completed summarization: a SummaryEvent node with summarizes
    /// edges to each covered event. Covered events stay in the graph.
    pub fn apply_summary(
        &self,
        plan: &SummaryPlan,
        summary_text: &str,
    ) -> Result<NodeId, StmError> {
        let mut inner = self.inner.write().unwrap();
        inner.run(plan.run)?;
        let summary_id = inner.alloc();
        inner.nodes.insert(
            summary_id,
            NodeData::Summary(SummaryNode {
                run: plan.run,
                text: summary_text.to_string(),
                covers: plan.covers,
            }),
        );
        for &event_id in &plan.event_ids {
            inner.edges.push(StmEdge {
                src: summary_id,
                dst: event_id,
                kind: StmEdgeKind::Summarizes,
            });
        }
        let run_node = inner.run_mut(plan.run)?;
        run_node.summaries.push(summary_id);
        run_node.covered.extend(plan.event_ids.iter().copied());
        Ok(summary_id)
    }

    /// Model-facing history: all summary events in order, then the events no
    /// summary covers, in index order.
    pub fn assemble_history(&self, run: NodeId) -> Result<Vec<Turn>, StmError> {
        let inner = self.inner.read().unwrap();
        let run_node = inner.run(run)?;
        let mut turns = Vec::new();
        for &summary_id in &run_node.summaries {
            if let Some(NodeData::Summary(summary)) = inner.nodes.get(&summary_id) {
                turns.push(Turn {
                    seq: turns.len() as u64 + 1,
                    kind: TurnKind::Summary {
                        text: summary.text.clone(),
                    },
                });
            }
        }
        for &event_id in &run_node.events {
            if run_node.covered.contains(&event_id) {
                continue;
            }
            let event = inner.event(event_id)?;
            turns.push(Turn {
                seq: turns.len() as u64 + 1,
                kind: payload_to_turn(&event.payload),
            });
        }
        Ok(turns)
    }

    pub fn list_agent_runs(&self, filter: &RunFilter) -> Vec<RunSummary> {
        let inner = self.inner.read().unwrap();
        let mut out = Vec::new();
        for (&id, node) in &inner.nodes {
            let NodeData::Run(run) = node else { continue };
            if let Some(name) = &filter.name {
                let needle = name.to_lowercase();
                if !run.agent_name.to_lowercase().contains(&needle)
                    && !run.agent_instance.to_lowercase().contains(&needle)
                {
                    continue;
                }
            }
            if let Some(status) = filter.status {
                if run.status != status {
                    continue;
                }
            }
            let parent_run = run
                .parent_event
                .and_then(|event_id| inner.event(event_id).ok())
                .map(|event| event.run);
            out.push(RunSummary {
                run_id: id,
                agent_id: run.agent_instance.clone(),
                agent_name: run.agent_name.clone(),
                status: run.status,
                parent_run,
                event_count: run.events.len(),
                summary_count: run.summaries.len(),
            });
        }
        out
    }

    /// Event payload documents in index order. `range` is an inclusive
    /// 1-based index interval; an empty intersection is not an error.
    pub fn inspect_events(
        &self,
        run: NodeId,
        range: Option<(u64, u64)>,
    ) -> Result<Vec<Value>, StmError> {
        let inner = self.inner.read().unwrap();
        let run_node = inner.run(run)?;
        let mut out = Vec::new();
        for &event_id in &run_node.events {
            let event = inner.event(event_id)?;
            if let Some((lo, hi)) = range {
                if event.index < lo || event.index > hi {
                    continue;
                }
            }
            let mut doc = inner.nodes[&event_id].payload_doc();
            doc["node_id"] = json!(event_id);
            out.push(doc);
        }
        Ok(out)
    }

    /// Full original bytes attached to a truncated event.
    pub fn recover_raw(&self, event: NodeId) -> Result<Vec<u8>, StmError> {
        let inner = self.inner.read().unwrap();
        let event_node = inner.event(event)?;
        let raw_id = event_node.raw.ok_or(StmError::NoRawAttachment(event))?;
        match inner.nodes.get(&raw_id) {
            Some(NodeData::Raw(raw)) => Ok(raw.bytes.clone()),
            _ => Err(StmError::NoRawAttachment(event)),
        }
    }

    /// All bindings matching a pattern, ordered by (start, end) node id.
    pub fn graph_query(&self, pattern: &GraphPattern) -> Result<Vec<QueryBinding>, StmError> {
        for (key, _) in &pattern.payload_contains {
            if key.is_empty() {
                return Err(StmError::MalformedPattern(
                    "payload predicate with empty key".into(),
                ));
            }
        }
        if let Some(walk) = &pattern.walk {
            if walk.edge_kinds.is_empty() {
                return Err(StmError::MalformedPattern("walk with no edge kinds".into()));
            }
            if walk.min_hops == 0 || walk.max_hops < walk.min_hops {
                return Err(StmError::MalformedPattern(format!(
                    "invalid hop bounds {}..{}",
                    walk.min_hops, walk.max_hops
                )));
            }
            if walk.max_hops > MAX_WALK_HOPS {
                return Err(StmError::MalformedPattern(format!(
                    "walks are bounded to {MAX_WALK_HOPS} hops"
                )));
            }
        }

        let inner = self.inner.read().unwrap();
        let starts: Vec<NodeId> = inner
            .nodes
            .iter()
            .filter(|(_, node)| {
                pattern
                    .node_kind
                    .map(|kind| node.kind() == kind)
                    .unwrap_or(true)
            })
            .filter(|(_, node)| {
                let doc = node.payload_doc();
                pattern.payload_contains.iter().all(|(key, needle)| {
                    doc.get(key)
                        .map(|value| match value {
                            Value::String(s) => s.contains(needle),
                            other => other.to_string().contains(needle),
                        })
                        .unwrap_or(false)
                })
            })
            .map(|(&id, _)| id)
            .collect();

        let Some(walk) = &pattern.walk else {
            return Ok(starts
                .into_iter()
                .map(|id| QueryBinding {
                    start: id,
                    end: id,
                    path: vec![id],
                })
                .collect());
        };

        let mut bindings = Vec::new();
        for start in starts {
            let mut seen_ends = HashSet::new();
            // Depth-first over (node, hops); adjacency in edge insertion order.
            let mut stack = vec![(start, 0u64, vec![start])];
            while let Some((node, hops, path)) = stack.pop() {
                if hops >= walk.min_hops
                    && walk
                        .target_kind
                        .map(|kind| inner.nodes.get(&node).map(|n| n.kind()) == Some(kind))
                        .unwrap_or(true)
                    && node != start
                    && seen_ends.insert(node)
                {
                    bindings.push(QueryBinding {
                        start,
                        end: node,
                        path: path.clone(),
                    });
                }
                if hops == walk.max_hops {
                    continue;
                }
                for edge in &inner.edges {
                    if edge.src == node
                        && walk.edge_kinds.contains(&edge.kind)
                        && !path.contains(&edge.dst)
                    {
                        let mut next_path = path.clone();
                        next_path.push(edge.dst);
                        stack.push((edge.dst, hops + 1, next_path));
                    }
                }
            }
        }
        bindings.sort_by_key(|b| (b.start, b.end));
        Ok(bindings)
    }

    /// Nodes (and the edges among them) belonging to one run: the AgentRun,
    /// its events, raw attachments, summary events, and directly spawned
    /// child AgentRun nodes.
    fn run_closure(&self, run: NodeId) -> Result<Vec<NodeId>, StmError> {
        let inner = self.inner.read().unwrap();
        let run_node = inner.run(run)?;
        let mut ids = vec![run];
        for &event_id in &run_node.events {
            ids.push(event_id);
            let event = inner.event(event_id)?;
            if let Some(raw) = event.raw {
                ids.push(raw);
            }
            for edge in &inner.edges {
                if edge.src == event_id && edge.kind == StmEdgeKind::Spawns {
                    ids.push(edge.dst);
                }
            }
        }
        ids.extend(run_node.summaries.iter().copied());
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }

    /// JSON-lines export: nodes first, then edges. `run = None` exports the
    /// whole graph.
    pub fn export(&self, run: Option<NodeId>) -> Result<String, StmError> {
        let include: Option<HashSet<NodeId>> = run
            .map(|r| self.run_closure(r))
            .transpose()?
            .map(|ids| ids.into_iter().collect());
        let inner = self.inner.read().unwrap();
        let mut out = Vec::new();
        for (&id, node) in &inner.nodes {
            if include
                .as_ref()
                .map(|set| set.contains(&id))
                .unwrap_or(true)
            {
                let line = json!({
                    "node_id": id,
                    "kind": node.kind(),
                    "payload": node.payload_doc(),
                });
                writeln!(out, "{line}").map_err(|e| StmError::Io(e.to_string()))?;
            }
        }
        for edge in &inner.edges {
            let keep = include
                .as_ref()
                .map(|set| set.contains(&edge.src) && set.contains(&edge.dst))
                .unwrap_or(true);
            if keep {
                let line = json!({"src": edge.src, "dst": edge.dst, "kind": edge.kind});
                writeln!(out, "{line}").map_err(|e| StmError::Io(e.to_string()))?;
            }
        }
        String::from_utf8(out).map_err(|e| StmError::Io(e.to_string()))
    }

    /// (node count, edge count) — cheap structural fingerprint for invariants.
    pub fn stats(&self) -> (usize, usize) {
        let inner = self.inner.read().unwrap();
        (inner.nodes.len(), inner.edges.len())
    }

    pub fn count_edges(&self, kind: StmEdgeKind) -> usize {
        self.inner
            .read()
            .unwrap()
            .edges
            .iter()
            .filter(|e| e.kind == kind)
            .count()
    }

    pub fn count_nodes(&self, kind: StmNodeKind) -> usize {
        self.inner
            .read()
            .unwrap()
            .nodes
            .values()
            .filter(|n| n.kind() == kind)
            .count()
    }
}

fn payload_to_turn(payload: &EventPayload) -> TurnKind {
    match payload {
        EventPayload::Text { text } => TurnKind::Text { text: text.clone() },
        EventPayload::Context { text } => TurnKind::Context { text: text.clone() },
        EventPayload::ToolCall {
            tool_name,
            args,
            response,
            ..
        } => TurnKind::ToolExchange {
            tool_name: tool_name.clone(),
            args: args.clone(),
            response: response.clone(),
        },
    }
}

/// Token estimate of an assembled history, using the gateway's estimator.
pub fn history_token_estimate(turns: &[Turn]) -> u64 {
    turns
        .iter()
        .map(|t| estimate_tokens(&t.render_text()))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    const LIMIT: usize = 65536;

    fn spec_doc(name: &str) -> Value {
        json!({"agent_name": name, "instruction": "do work", "model_name": "inherit"})
    }

    fn tool_event(tool: &str) -> EventPayload {
        EventPayload::ToolCall {
            tool_name: tool.into(),
            args: json!({}),
            response: json!({"status": "ok"}),
            is_error: false,
            truncated: false,
        }
    }

    #[test]
    fn root_open_has_one_run_and_no_edges() {
        let graph = StmGraph::new(LIMIT);
        graph
            .open_agent_run(None, spec_doc("root"), "task")
            .unwrap();
        assert_eq!(graph.stats(), (1, 0));
    }

    #[test]
    fn spawn_parent_must_be_a_call_like_tool_event() {
        let graph = StmGraph::new(LIMIT);
        let root = graph
            .open_agent_run(None, spec_doc("root"), "task")
            .unwrap();
        let call = graph
            .append_event(root, tool_event("call_agent"), None)
            .unwrap();
        let child = graph
            .open_agent_run(Some(call), spec_doc("helper"), "subtask")
            .unwrap();
        assert_eq!(graph.count_edges(StmEdgeKind::Spawns), 1);
        assert!(graph.agent_instance(child).unwrap().starts_with("helper#"));

        let text = graph
            .append_event(
                root,
                EventPayload::Text {
                    text: "thinking".into(),
                },
                None,
            )
            .unwrap();
        assert!(matches!(
            graph.open_agent_run(Some(text), spec_doc("x"), "t"),
            Err(StmError::InvalidParent(_))
        ));
    }

    #[test]
    fn small_response_stores_no_raw_node() {
        let graph = StmGraph::new(LIMIT);
        let run = graph.open_agent_run(None, spec_doc("a"), "t").unwrap();
        graph
            .append_event(run, tool_event("echo"), Some(b"small".to_vec()))
            .unwrap();
        assert_eq!(graph.count_nodes(StmNodeKind::RawToolResponse), 0);
    }

    #[test]
    fn oversized_response_truncates_and_recovers_bytes() {
        let graph = StmGraph::new(64);
        let run = graph.open_agent_run(None, spec_doc("a"), "t").unwrap();
        let big = vec![0x41u8; 1024];
        let payload = EventPayload::ToolCall {
            tool_name: "dump".into(),
            args: json!({}),
            response: json!(String::from_utf8(big.clone()).unwrap()),
            is_error: false,
            truncated: false,
        };
        let event = graph.append_event(run, payload, Some(big.clone())).unwrap();

        assert_eq!(graph.count_nodes(StmNodeKind::RawToolResponse), 1);
        assert_eq!(graph.count_edges(StmEdgeKind::RawOf), 1);
        let docs = graph.inspect_events(run, None).unwrap();
        assert_eq!(docs[0]["truncated"], json!(true));
        assert_eq!(docs[0]["response"].as_str().unwrap().len(), 64);

        let recovered = graph.recover_raw(event).unwrap();
        assert_eq!(recovered, big);
        assert_eq!(graph.recover_raw(event).unwrap(), recovered);
    }

    #[test]
    fn no_raw_attachment_is_an_error() {
        let graph = StmGraph::new(LIMIT);
        let run = graph.open_agent_run(None, spec_doc("a"), "t").unwrap();
        let event = graph.append_event(run, tool_event("echo"), None).unwrap();
        assert!(matches!(
            graph.recover_raw(event),
            Err(StmError::NoRawAttachment(_))
        ));
    }

    #[test]
    fn append_to_closed_run_rejected() {
        let graph = StmGraph::new(LIMIT);
        let run = graph.open_agent_run(None, spec_doc("a"), "t").unwrap();
        graph
            .close_run(run, RunStatus::Succeeded, Some("done".into()), None)
            .unwrap();
        assert!(matches!(
            graph.append_event(run, tool_event("echo"), None),
            Err(StmError::RunClosed(_))
        ));
    }

    #[test]
    fn event_indices_are_dense() {
        let graph = StmGraph::new(LIMIT);
        let run = graph.open_agent_run(None, spec_doc("a"), "t").unwrap();
        for _ in 0..5 {
            graph.append_event(run, tool_event("echo"), None).unwrap();
        }
        let docs = graph.inspect_events(run, None).unwrap();
        let indices: Vec<u64> = docs.iter().map(|d| d["index"].as_u64().unwrap()).collect();
        assert_eq!(indices, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn summary_covers_older_events_and_shrinks_history() {
        let graph = StmGraph::new(LIMIT);
        let run = graph.open_agent_run(None, spec_doc("a"), "t").unwrap();
        for n in 0..10 {
            graph
                .append_event(
                    run,
                    EventPayload::Text {
                        text: format!("step {n} with plenty of words to weigh"),
                    },
                    None,
                )
                .unwrap();
        }
        let before = history_token_estimate(&graph.assemble_history(run).unwrap());

        let plan = graph.summary_plan(run, 3).unwrap();
        assert_eq!(plan.covers, (1, 7));
        assert_eq!(plan.event_ids.len(), 7);
        graph.apply_summary(&plan, "compressed").unwrap();

        let history = graph.assemble_history(run).unwrap();
        assert_eq!(history.len(), 1 + 3);
        assert!(matches!(history[0].kind, TurnKind::Summary { .. }));
        let after = history_token_estimate(&history);
        assert!(after < before, "history must shrink: {after} !< {before}");

        // Covered events remain inspectable.
        assert_eq!(graph.inspect_events(run, None).unwrap().len(), 10);

        // Second pass with nothing new to cover is vacuous.
        assert!(matches!(
            graph.summary_plan(run, 3),
            Err(StmError::NothingToSummarize(_))
        ));
    }

    #[test]
    fn keep_recent_at_least_event_count_is_vacuous() {
        let graph = StmGraph::new(LIMIT);
        let run = graph.open_agent_run(None, spec_doc("a"), "t").unwrap();
        graph.append_event(run, tool_event("echo"), None).unwrap();
        assert!(matches!(
            graph.summary_plan(run, 8),
            Err(StmError::NothingToSummarize(_))
        ));
    }

    #[test]
    fn list_runs_links_child_to_parent() {
        let graph = StmGraph::new(LIMIT);
        let root = graph.open_agent_run(None, spec_doc("root"), "t").unwrap();
        let call = graph
            .append_event(root, tool_event("call_agent"), None)
            .unwrap();
        let child = graph
            .open_agent_run(Some(call), spec_doc("gdb_helper"), "sub")
            .unwrap();

        let runs = graph.list_agent_runs(&RunFilter::default());
        assert_eq!(runs.len(), 2);
        let child_row = runs.iter().find(|r| r.run_id == child).unwrap();
        assert_eq!(child_row.parent_run, Some(root));

        let filtered = graph.list_agent_runs(&RunFilter {
            name: Some("gdb".into()),
            status: None,
        });
        assert_eq!(filtered.len(), 1);
        assert_eq!(filtered[0].agent_name, "gdb_helper");

        assert!(StmGraph::new(LIMIT)
            .list_agent_runs(&RunFilter::default())
            .is_empty());
    }

    #[test]
    fn inspect_ranges_slice_inclusively() {
        let graph = StmGraph::new(LIMIT);
        let run = graph.open_agent_run(None, spec_doc("a"), "t").unwrap();
        for _ in 0..5 {
            graph.append_event(run, tool_event("echo"), None).unwrap();
        }
        assert_eq!(graph.inspect_events(run, None).unwrap().len(), 5);
        let slice = graph.inspect_events(run, Some((2, 3))).unwrap();
        let indices: Vec<u64> = slice.iter().map(|d| d["index"].as_u64().unwrap()).collect();
        assert_eq!(indices, vec![2, 3]);
        assert!(graph.inspect_events(run, Some((9, 12))).unwrap().is_empty());
        assert!(matches!(
            graph.inspect_events(999, None),
            Err(StmError::UnknownRun(999))
        ));
    }

    #[test]
    fn query_finds_depth_two_spawn_chain() {
        let graph = StmGraph::new(LIMIT);
        let root = graph.open_agent_run(None, spec_doc("root"), "t").unwrap();
        let call1 = graph
            .append_event(root, tool_event("call_agent"), None)
            .unwrap();
        let mid = graph
            .open_agent_run(Some(call1), spec_doc("mid"), "t")
            .unwrap();
        let call2 = graph
            .append_event(mid, tool_event("create_agent"), None)
            .unwrap();
        let leaf = graph
            .open_agent_run(Some(call2), spec_doc("leaf"), "t")
            .unwrap();

        // Tree shape: |AgentRun| = |spawns| + 1.
        assert_eq!(
            graph.count_nodes(StmNodeKind::AgentRun),
            graph.count_edges(StmEdgeKind::Spawns) + 1
        );

        let pattern = GraphPattern {
            node_kind: Some(StmNodeKind::AgentRun),
            payload_contains: vec![("agent_name".into(), "root".into())],
            walk: Some(EdgeWalk {
                edge_kinds: vec![StmEdgeKind::Emits, StmEdgeKind::Spawns],
                min_hops: 4,
                max_hops: 4,
                target_kind: Some(StmNodeKind::AgentRun),
            }),
        };
        let bindings = graph.graph_query(&pattern).unwrap();
        assert_eq!(bindings.len(), 1);
        assert_eq!(bindings[0].start, root);
        assert_eq!(bindings[0].end, leaf);
    }

    #[test]
    fn query_edge_cases() {
        let graph = StmGraph::new(4);
        let run = graph.open_agent_run(None, spec_doc("a"), "t").unwrap();
        let payload = EventPayload::ToolCall {
            tool_name: "dump".into(),
            args: json!({}),
            response: json!("0123456789"),
            is_error: false,
            truncated: false,
        };
        let event = graph
            .append_event(run, payload, Some(b"0123456789".to_vec()))
            .unwrap();

        // Walk over raw_of from the truncated event: exactly one binding.
        let raw_walk = GraphPattern {
            node_kind: Some(StmNodeKind::Event),
            payload_contains: vec![("tool_name".into(), "dump".into())],
            walk: Some(EdgeWalk {
                edge_kinds: vec![StmEdgeKind::RawOf],
                min_hops: 1,
                max_hops: 1,
                target_kind: Some(StmNodeKind::RawToolResponse),
            }),
        };
        let bindings = graph.graph_query(&raw_walk).unwrap();
        assert_eq!(bindings.len(), 1);
        assert_eq!(bindings[0].start, event);

        // Impossible kind: empty result, not an error.
        let empty = graph
            .graph_query(&GraphPattern {
                node_kind: Some(StmNodeKind::SummaryEvent),
                payload_contains: vec![],
                walk: None,
            })
            .unwrap();
        assert!(empty.is_empty());

        // Malformed: zero-hop walk and empty predicate key.
        assert!(matches!(
            graph.graph_query(&GraphPattern {
                node_kind: None,
                payload_contains: vec![],
                walk: Some(EdgeWalk {
                    edge_kinds: vec![StmEdgeKind::Emits],
                    min_hops: 0,
                    max_hops: 0,
                    target_kind: None,
                }),
            }),
            Err(StmError::MalformedPattern(_))
        ));
        assert!(matches!(
            graph.graph_query(&GraphPattern {
                node_kind: None,
                payload_contains: vec![("".into(), "x".into())],
                walk: None,
            }),
            Err(StmError::MalformedPattern(_))
        ));
    }

    #[test]
    fn export_emits_nodes_before_edges() {
        let graph = StmGraph::new(LIMIT);
        let root = graph.open_agent_run(None, spec_doc("root"), "t").unwrap();
        graph
            .append_event(root, tool_event("call_agent"), None)
            .unwrap();
        let text = graph.export(Some(root)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines.len() >= 3);
        let first_edge = lines
            .iter()
            .position(|l| l.contains("\"src\""))
            .expect("has edges");
        for line in &lines[..first_edge] {
            assert!(line.contains("\"node_id\""));
        }
        for line in &lines[first_edge..] {
            assert!(line.contains("\"src\""));
        }
    }
}
