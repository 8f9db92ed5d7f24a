//! The memory agent: a natural-language façade over both memory tiers.
//! Queries run through an ordinary agent loop whose tool scope covers
//! short-term retrieval and long-term read/write; stores go through a
//! search-first dedup pass so only non-redundant knowledge persists.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::{ModelRequest, ModelResponse, TurnKind};
use crate::kernel::{Kernel, KernelError, MEMORY_AGENT_TOOLS};
use crate::ltm::RetrievalQuery;

const MEMORY_QUERY_MAX_STEPS: u64 = 32;

const DEDUP_INSTRUCTION: &str =
    "A stored memory node closely matches a new candidate. Reply with the merged content \
     for the existing node, or exactly 'skip' to keep the stored node unchanged.";

#[derive(Debug, Clone)]
pub struct MemoryQuery {
    pub requester: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryTier {
    ShortTerm,
    LongTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryAction {
    Search,
    Store,
    Update,
    Delete,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemoryAnswer {
    pub tier: MemoryTier,
    pub action: MemoryAction,
    pub found: bool,
    pub total_found: usize,
    pub results: Vec<Value>,
    pub summary: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct StoreCandidate {
    pub node_type: String,
    pub label: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreDecision {
    Created(u64),
    Updated(u64),
    Skipped(u64),
}

fn classify(tool_name: &str) -> Option<(MemoryTier, MemoryAction)> {
    match tool_name {
        "list_agent_runs" | "inspect_events" | "recover_raw" | "graph_query" => {
            Some((MemoryTier::ShortTerm, MemoryAction::Search))
        }
        "search_nodes" | "grep_nodes" | "list_schema" => {
            Some((MemoryTier::LongTerm, MemoryAction::Search))
        }
        "create_node" | "create_edge" => Some((MemoryTier::LongTerm, MemoryAction::Store)),
        "update_node" => Some((MemoryTier::LongTerm, MemoryAction::Update)),
        "delete_node" => Some((MemoryTier::LongTerm, MemoryAction::Delete)),
        _ => None,
    }
}

/// Pull result documents out of a retrieval tool's response.
fn extract_results(tool_name: &str, response: &Value) -> Vec<Value> {
    let list_key = match tool_name {
        "search_nodes" | "grep_nodes" => "results",
        "list_agent_runs" => "runs",
        "inspect_events" => "events",
        "graph_query" => "bindings",
        "recover_raw" | "list_schema" => {
            return if response.is_null() {
                Vec::new()
            } else {
                vec![response.clone()]
            }
        }
        _ => return Vec::new(),
    };
    response
        .get(list_key)
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default()
}

impl Kernel {
    /// Answer a natural-language memory query by running the memory agent's
    /// own loop and reading back which memory tools it actually invoked.
    pub fn handle_query(&self, query: &MemoryQuery) -> Result<MemoryAnswer, KernelError> {
        if query.text.is_empty() {
            return Err(KernelError::Protocol("memory query text is empty".into()));
        }
        let (graph, outcome) =
            self.run_memory_agent_clone(&query.text, None, MEMORY_QUERY_MAX_STEPS)?;
        let run = outcome?;

        let mut results = Vec::new();
        let mut last_routing: Option<(MemoryTier, MemoryAction)> = None;
        for event in graph.inspect_events(run.run_id, None)? {
            if event.get("turn").and_then(Value::as_str) != Some("tool_call") {
                continue;
            }
            let tool_name = event
                .get("tool_name")
                .and_then(Value::as_str)
                .unwrap_or_default();
            let Some(routing) = classify(tool_name) else {
                continue;
            };
            last_routing = Some(routing);
            let is_error = event
                .get("is_error")
                .and_then(Value::as_bool)
                .unwrap_or(false);
            if !is_error {
                if let Some(response) = event.get("response") {
                    results.extend(extract_results(tool_name, response));
                }
            }
        }

        let Some((tier, action)) = last_routing else {
            return Err(KernelError::RoutingFailure(format!(
                "memory agent loop for '{}' ended without invoking any memory tool",
                query.text
            )));
        };

        let total_found = results.len();
        let found = if action == MemoryAction::Search {
            total_found > 0
        } else {
            true
        };
        Ok(MemoryAnswer {
            tier,
            action,
            found,
            total_found,
            results,
            summary: run.final_text,
        })
    }

    /// Search-first store: an existing node scoring at or above the dedup
    /// threshold is merged or skipped (one model completion decides);
    /// otherwise a new node is created.
    pub fn dedup_store(
        &self,
        backend_id: &str,
        candidate: &StoreCandidate,
    ) -> Result<StoreDecision, KernelError> {
        let known_type = self
            .ltm()
            .list_schema()
            .node_types
            .contains(&candidate.node_type);
        if known_type {
            let hits = self.ltm().search_nodes(&RetrievalQuery {
                node_type: candidate.node_type.clone(),
                query_label: candidate.label.clone(),
                top_n: 3,
            })?;
            if let Some(top) = hits.first() {
                if top.score >= self.config().dedup_threshold {
                    let node_id = top.node.node_id;
                    let mut request = ModelRequest::new("memory_agent", DEDUP_INSTRUCTION);
                    request.push_turn(TurnKind::Context {
                        text: format!(
                            "Stored node [{}] label: {}\ncontent: {}",
                            top.node.node_type, top.node.label, top.node.content
                        ),
                    });
                    request.push_turn(TurnKind::Context {
                        text: format!(
                            "Candidate [{}] label: {}\ncontent: {}",
                            candidate.node_type, candidate.label, candidate.content
                        ),
                    });
                    let response = self.gateway().complete(backend_id, &request)?;
                    let text = match response {
                        ModelResponse::Text { text } => text,
                        ModelResponse::ToolCall { .. } => {
                            return Err(KernelError::Protocol(
                                "dedup completion returned a tool call".into(),
                            ))
                        }
                    };
                    if text.trim().eq_ignore_ascii_case("skip") {
                        return Ok(StoreDecision::Skipped(node_id));
                    }
                    self.ltm().update_node(node_id, None, Some(text.trim()))?;
                    return Ok(StoreDecision::Updated(node_id));
                }
            }
        }
        let node_id =
            self.ltm()
                .create_node(&candidate.node_type, &candidate.label, &candidate.content)?;
        Ok(StoreDecision::Created(node_id))
    }
}

/// The memory agent's writable surface must exclude every short-term writer.
pub fn memory_agent_tool_names() -> &'static [&'static str] {
    &MEMORY_AGENT_TOOLS
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::KernelConfig;
    use crate::gateway::{ModelResponse, ScriptedTranscript};
    use crate::kernel::MEMORY_AGENT_NAME;
    use crate::topology::AgentSpec;
    use serde_json::json;

    fn kernel() -> (Kernel, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let registry = dir.path().join("registry");
        let workspace = dir.path().join("workspace");
        std::fs::create_dir_all(&registry).unwrap();
        std::fs::create_dir_all(&workspace).unwrap();
        let kernel = Kernel::new(KernelConfig::new(&registry, &workspace)).unwrap();
        (kernel, dir)
    }

    fn seed_knowledge_fixture(kernel: &Kernel) {
        let ltm = kernel.ltm();
        let understanding = ltm
            .create_node(
                "code_understanding",
                "Logic for collection validation and galaxy.yml checks",
                "Relevant code spans the validation helpers and schema constraints.",
            )
            .unwrap();
        let search = ltm
            .create_node(
                "search_result",
                "Search for 'validate|keyword'",
                "Search results highlighting validation and keyword checks.",
            )
            .unwrap();
        let file = ltm
            .create_node(
                "file",
                "lib/galaxy/collections_meta.yml",
                "Schema-level constraints for collection metadata fields.",
            )
            .unwrap();
        ltm.create_edge(understanding, file, "relates_to").unwrap();
        ltm.create_edge(search, understanding, "relates_to")
            .unwrap();
    }

    #[test]
    fn scripted_long_term_search_aggregates_results() {
        let (kernel, _dir) = kernel();
        seed_knowledge_fixture(&kernel);
        kernel
            .register_scripted(
                "scripted-mem",
                ScriptedTranscript::of_responses(vec![
                    ModelResponse::tool_call(
                        "search_nodes",
                        json!({"node_type": "code_understanding", "query_label": "collection name validation mechanism", "top_n": 3}),
                    ),
                    ModelResponse::tool_call(
                        "search_nodes",
                        json!({"node_type": "search_result", "query_label": "collection name validation mechanism", "top_n": 3}),
                    ),
                    ModelResponse::tool_call(
                        "search_nodes",
                        json!({"node_type": "file", "query_label": "collection name validation mechanism", "top_n": 3}),
                    ),
                    ModelResponse::text(
                        "Validation logic, a stored search, and the schema file all match.",
                    ),
                ]),
            )
            .unwrap();

        let answer = kernel
            .handle_query(&MemoryQuery {
                requester: "root#1".into(),
                text: "search the collection name validation mechanism".into(),
            })
            .unwrap();
        assert_eq!(answer.tier, MemoryTier::LongTerm);
        assert_eq!(answer.action, MemoryAction::Search);
        assert!(answer.found);
        assert_eq!(answer.total_found, answer.results.len());
        assert_eq!(answer.total_found, 3);
        let types: Vec<&str> = answer
            .results
            .iter()
            .map(|r| r["node_type"].as_str().unwrap())
            .collect();
        assert!(types.contains(&"code_understanding"));
        assert!(types.contains(&"search_result"));
        assert!(types.contains(&"file"));
    }

    #[test]
    fn short_term_route_reports_short_tier() {
        let (kernel, _dir) = kernel();
        // Record one ordinary run into shared short-term memory first.
        kernel
            .register_scripted(
                "scripted-root",
                ScriptedTranscript::of_responses(vec![ModelResponse::text("did the thing")]),
            )
            .unwrap();
        kernel
            .run_root(
                &AgentSpec::new("gdb_helper", "debug things").with_model("scripted-root"),
                "trace the crash",
                crate::kernel::RunLimits { max_steps: 4 },
            )
            .unwrap();

        kernel
            .register_scripted(
                "scripted-mem",
                ScriptedTranscript::of_responses(vec![
                    ModelResponse::tool_call("list_agent_runs", json!({"name": "gdb"})),
                    ModelResponse::tool_call("inspect_events", json!({"run": 1})),
                    ModelResponse::text("The gdb run finished with one text event."),
                ]),
            )
            .unwrap();
        kernel.set_default_backend("scripted-mem");

        let before = kernel.stm().stats();
        let answer = kernel
            .handle_query(&MemoryQuery {
                requester: "op".into(),
                text: "what did the gdb sub-agent report?".into(),
            })
            .unwrap();
        assert_eq!(answer.tier, MemoryTier::ShortTerm);
        assert_eq!(answer.action, MemoryAction::Search);
        assert!(answer.found);
        // Write prohibition: the shared graph is untouched by the query.
        assert_eq!(kernel.stm().stats(), before);
    }

    #[test]
    fn loop_without_memory_tools_is_a_routing_failure() {
        let (kernel, _dir) = kernel();
        kernel
            .register_scripted(
                "scripted-mem",
                ScriptedTranscript::of_responses(vec![ModelResponse::text("nothing to do")]),
            )
            .unwrap();
        match kernel.handle_query(&MemoryQuery {
            requester: "op".into(),
            text: "remember nothing".into(),
        }) {
            Err(KernelError::RoutingFailure(_)) => {}
            other => panic!("expected RoutingFailure, got {other:?}"),
        }
    }

    #[test]
    fn memory_agent_scope_is_exactly_the_retrieval_and_ltm_set() {
        let (kernel, _dir) = kernel();
        let entry = kernel.pool().get(MEMORY_AGENT_NAME).unwrap();
        let mut names: Vec<&str> = entry.scope.entries.iter().map(|e| e.name()).collect();
        names.sort_unstable();
        let mut expected: Vec<&str> = memory_agent_tool_names().to_vec();
        expected.sort_unstable();
        assert_eq!(names, expected);
        // No short-term writers are model-facing tools at all.
        for writer in ["append_event", "open_agent_run", "summarize_history"] {
            assert!(!names.contains(&writer));
            assert!(crate::kernel::builtin_summary(writer).is_none());
        }
    }

    #[test]
    fn dedup_store_creates_then_converges_to_one_node() {
        let (kernel, _dir) = kernel();
        let candidate = StoreCandidate {
            node_type: "search_result".into(),
            label: "Search for 'validate|keyword'".into(),
            content: "Search results for validation and keyword checks.".into(),
        };

        // Empty store: created.
        kernel
            .register_scripted("dedup-0", ScriptedTranscript::default())
            .unwrap();
        let first = kernel.dedup_store("dedup-0", &candidate).unwrap();
        let created_id = match first {
            StoreDecision::Created(id) => id,
            other => panic!("expected Created, got {other:?}"),
        };
        assert_eq!(kernel.ltm().nodes_of_type("search_result").len(), 1);

        // Identical store, scripted skip: no duplicate node.
        kernel
            .register_scripted(
                "dedup-skip",
                ScriptedTranscript::of_responses(vec![ModelResponse::text("skip")]),
            )
            .unwrap();
        assert_eq!(
            kernel.dedup_store("dedup-skip", &candidate).unwrap(),
            StoreDecision::Skipped(created_id)
        );
        assert_eq!(kernel.ltm().nodes_of_type("search_result").len(), 1);

        // Same label, new content, scripted merge: content replaced in place.
        let revised = StoreCandidate {
            content: "Refined search results including keyword rejection paths.".into(),
            ..candidate.clone()
        };
        kernel
            .register_scripted(
                "dedup-merge",
                ScriptedTranscript::of_responses(vec![ModelResponse::text(
                    "Merged: validation results plus keyword rejection paths.",
                )]),
            )
            .unwrap();
        assert_eq!(
            kernel.dedup_store("dedup-merge", &revised).unwrap(),
            StoreDecision::Updated(created_id)
        );
        assert_eq!(kernel.ltm().nodes_of_type("search_result").len(), 1);
        assert_eq!(
            kernel.ltm().get_node(created_id).unwrap().content,
            "Merged: validation results plus keyword rejection paths."
        );
    }
}
