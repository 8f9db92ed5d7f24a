//! Long-term memory: a typed, labeled knowledge graph shared across tasks.
//! Node labels carry embeddings for similarity retrieval; a grep-style
//! lookup complements embedding search with exact symbol matching.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LtmError {
    #[error("node label must be nonempty")]
    EmptyLabel,
    #[error("embedding provider failure: {0}")]
    ProviderFailure(String),
    #[error("unknown node {0}")]
    UnknownNode(u64),
    #[error("duplicate edge {src} -{edge_type}-> {dst}")]
    DuplicateEdge {
        src: u64,
        dst: u64,
        edge_type: String,
    },
    #[error("unknown node type '{0}'")]
    UnknownNodeType(String),
    #[error("malformed grep pattern: {0}")]
    MalformedPattern(String),
    #[error("invalid retrieval query: {0}")]
    InvalidQuery(String),
    #[error("store io error: {0}")]
    Io(String),
}

/// Embedding contract: a deterministic test provider ships in-tree; network
/// providers plug in behind the same trait.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, LtmError>;
}

/// Deterministic embedder: hashes lowercased word tokens into `D` buckets
/// and L2-normalizes the count vector. Reproducible without network access.
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self { dimension }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(64)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for byte in bytes {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, LtmError> {
        let mut vector = vec![0.0f64; self.dimension];
        let mut any = false;
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let bucket = (fnv1a(token.to_lowercase().as_bytes()) % self.dimension as u64) as usize;
            vector[bucket] += 1.0;
            any = true;
        }
        if !any {
            // No tokens at all: a stable unit vector keyed off the raw text.
            let bucket = (fnv1a(text.as_bytes()) % self.dimension as u64) as usize;
            vector[bucket] = 1.0;
        }
        Ok(vector)
    }
}

fn l2_normalize(mut vector: Vec<f64>) -> Vec<f64> {
    let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut vector {
            *x /= norm;
        }
    }
    vector
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtmNode {
    pub node_id: u64,
    pub node_type: String,
    pub label: String,
    pub content: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtmEdge {
    pub edge_id: u64,
    pub src: u64,
    pub dst: u64,
    pub edge_type: String,
}

/// The known node and edge types. Append-only: deleting the last node of a
/// type never removes the type, keeping this a stable grounding surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaCatalog {
    pub node_types: BTreeSet<String>,
    pub edge_types: BTreeSet<String>,
}

impl SchemaCatalog {
    /// Coding-oriented seed types.
    pub fn seeded() -> Self {
        let node_types = [
            "file",
            "function",
            "class",
            "module",
            "code_understanding",
            "search_result",
            "error",
            "query_answer",
            "concept",
        ]
        .into_iter()
        .map(str::to_string)
        .collect();
        let edge_types = [
            "contains",
            "calls",
            "imports",
            "relates_to",
            "answers",
            "caused_by",
        ]
        .into_iter()
        .map(str::to_string)
        .collect();
        Self {
            node_types,
            edge_types,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub node_type: String,
    pub query_label: String,
    pub top_n: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OneHop {
    pub neighbors: Vec<LtmNode>,
    pub edges: Vec<LtmEdge>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchHit {
    pub node: LtmNode,
    pub score: f64,
    pub one_hop: OneHop,
}

struct StoreInner {
    nodes: BTreeMap<u64, LtmNode>,
    edges: BTreeMap<u64, LtmEdge>,
    catalog: SchemaCatalog,
    next_node: u64,
    next_edge: u64,
}

/// The long-term store. Concurrent reads; writes serialized store-wide.
pub struct LtmStore {
    inner: RwLock<StoreInner>,
    provider: Arc<dyn EmbeddingProvider>,
}

impl LtmStore {
    pub fn new(provider: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            inner: RwLock::new(StoreInner {
                nodes: BTreeMap::new(),
                edges: BTreeMap::new(),
                catalog: SchemaCatalog::seeded(),
                next_node: 0,
                next_edge: 0,
            }),
            provider,
        }
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    fn embed_normalized(&self, label: &str) -> Result<Vec<f64>, LtmError> {
        Ok(l2_normalize(self.provider.embed(label)?))
    }

    pub fn create_node(
        &self,
        node_type: &str,
        label: &str,
        content: &str,
    ) -> Result<u64, LtmError> {
        if label.is_empty() {
            return Err(LtmError::EmptyLabel);
        }
        let embedding = self.embed_normalized(label)?;
        let mut inner = self.inner.write().unwrap();
        inner.next_node += 1;
        let node_id = inner.next_node;
        inner.catalog.node_types.insert(node_type.to_string());
        inner.nodes.insert(
            node_id,
            LtmNode {
                node_id,
                node_type: node_type.to_string(),
                label: label.to_string(),
                content: content.to_string(),
                embedding,
            },
        );
        Ok(node_id)
    }

    pub fn create_edge(&self, src: u64, dst: u64, edge_type: &str) -> Result<u64, LtmError> {
        let mut inner = self.inner.write().unwrap();
        if !inner.nodes.contains_key(&src) {
            return Err(LtmError::UnknownNode(src));
        }
        if !inner.nodes.contains_key(&dst) {
            return Err(LtmError::UnknownNode(dst));
        }
        let duplicate = inner
            .edges
            .values()
            .any(|e| e.src == src && e.dst == dst && e.edge_type == edge_type);
        if duplicate {
            return Err(LtmError::DuplicateEdge {
                src,
                dst,
                edge_type: edge_type.to_string(),
            });
        }
        inner.next_edge += 1;
        let edge_id = inner.next_edge;
        inner.catalog.edge_types.insert(edge_type.to_string());
        inner.edges.insert(
            edge_id,
            LtmEdge {
                edge_id,
                src,
                dst,
                edge_type: edge_type.to_string(),
            },
        );
        Ok(edge_id)
    }

    pub fn list_schema(&self) -> SchemaCatalog {
        self.inner.read().unwrap().catalog.clone()
    }

    pub fn get_node(&self, node_id: u64) -> Result<LtmNode, LtmError> {
        self.inner
            .read()
            .unwrap()
            .nodes
            .get(&node_id)
            .cloned()
            .ok_or(LtmError::UnknownNode(node_id))
    }

    fn one_hop_of(inner: &StoreInner, node_id: u64) -> OneHop {
        let mut edges = Vec::new();
        let mut neighbor_ids = BTreeSet::new();
        for edge in inner.edges.values() {
            if edge.src == node_id || edge.dst == node_id {
                edges.push(edge.clone());
                neighbor_ids.insert(if edge.src == node_id {
                    edge.dst
                } else {
                    edge.src
                });
            }
        }
        neighbor_ids.remove(&node_id);
        OneHop {
            neighbors: neighbor_ids
                .into_iter()
                .filter_map(|id| inner.nodes.get(&id).cloned())
                .collect(),
            edges,
        }
    }

    /// Top-N nodes of one type by cosine similarity to the embedded query
    /// label, each with its one-hop subgraph. Ties break by label, then id.
    pub fn search_nodes(&self, query: &RetrievalQuery) -> Result<Vec<SearchHit>, LtmError> {
        if query.top_n == 0 {
            return Err(LtmError::InvalidQuery("top_n must be at least 1".into()));
        }
        let query_embedding = self.embed_normalized(&query.query_label)?;
        let inner = self.inner.read().unwrap();
        if !inner.catalog.node_types.contains(&query.node_type) {
            return Err(LtmError::UnknownNodeType(query.node_type.clone()));
        }
        let mut scored: Vec<(f64, &LtmNode)> = inner
            .nodes
            .values()
            .filter(|n| n.node_type == query.node_type)
            .map(|n| (cosine(&query_embedding, &n.embedding), n))
            .collect();
        scored.sort_by(|(sa, na), (sb, nb)| {
            sb.partial_cmp(sa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| na.label.cmp(&nb.label))
                .then_with(|| na.node_id.cmp(&nb.node_id))
        });
        Ok(scored
            .into_iter()
            .take(query.top_n)
            .map(|(score, node)| SearchHit {
                node: node.clone(),
                score,
                one_hop: Self::one_hop_of(&inner, node.node_id),
            })
            .collect())
    }

    /// Pattern lookup over labels, regex search semantics, ordered by id.
    pub fn grep_nodes(&self, pattern: &str) -> Result<Vec<LtmNode>, LtmError> {
        let re =
            regex::Regex::new(pattern).map_err(|e| LtmError::MalformedPattern(e.to_string()))?;
        let inner = self.inner.read().unwrap();
        Ok(inner
            .nodes
            .values()
            .filter(|n| re.is_match(&n.label))
            .cloned()
            .collect())
    }

    pub fn update_node(
        &self,
        node_id: u64,
        new_label: Option<&str>,
        new_content: Option<&str>,
    ) -> Result<(), LtmError> {
        if let Some(label) = new_label {
            if label.is_empty() {
                return Err(LtmError::EmptyLabel);
            }
        }
        let new_embedding = new_label.map(|l| self.embed_normalized(l)).transpose()?;
        let mut inner = self.inner.write().unwrap();
        let node = inner
            .nodes
            .get_mut(&node_id)
            .ok_or(LtmError::UnknownNode(node_id))?;
        if let Some(label) = new_label {
            node.label = label.to_string();
            node.embedding = new_embedding.unwrap();
        }
        if let Some(content) = new_content {
            node.content = content.to_string();
        }
        Ok(())
    }

    /// Remove a node and every incident edge.
    pub fn delete_node(&self, node_id: u64) -> Result<(), LtmError> {
        let mut inner = self.inner.write().unwrap();
        if inner.nodes.remove(&node_id).is_none() {
            return Err(LtmError::UnknownNode(node_id));
        }
        inner
            .edges
            .retain(|_, e| e.src != node_id && e.dst != node_id);
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.inner.read().unwrap().nodes.len()
    }

    pub fn nodes_of_type(&self, node_type: &str) -> Vec<LtmNode> {
        self.inner
            .read()
            .unwrap()
            .nodes
            .values()
            .filter(|n| n.node_type == node_type)
            .cloned()
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.inner.read().unwrap().edges.len()
    }

    pub fn edge_count_incident(&self, node_id: u64) -> usize {
        self.inner
            .read()
            .unwrap()
            .edges
            .values()
            .filter(|e| e.src == node_id || e.dst == node_id)
            .count()
    }

    /// No edge may reference a missing node.
    pub fn check_referential_integrity(&self) -> bool {
        let inner = self.inner.read().unwrap();
        inner
            .edges
            .values()
            .all(|e| inner.nodes.contains_key(&e.src) && inner.nodes.contains_key(&e.dst))
    }

    /// JSON-lines dump: nodes, then edges, then the catalog record.
    pub fn export_string(&self) -> Result<String, LtmError> {
        let inner = self.inner.read().unwrap();
        let mut out = String::new();
        for node in inner.nodes.values() {
            let line = json!({
                "record": "node",
                "node_id": node.node_id,
                "node_type": node.node_type,
                "label": node.label,
                "content": node.content,
                "embedding": node.embedding,
            });
            writeln!(out, "{line}").map_err(|e| LtmError::Io(e.to_string()))?;
        }
        for edge in inner.edges.values() {
            let line = json!({
                "record": "edge",
                "edge_id": edge.edge_id,
                "src": edge.src,
                "dst": edge.dst,
                "edge_type": edge.edge_type,
            });
            writeln!(out, "{line}").map_err(|e| LtmError::Io(e.to_string()))?;
        }
        let catalog = json!({
            "record": "catalog",
            "node_types": inner.catalog.node_types,
            "edge_types": inner.catalog.edge_types,
        });
        writeln!(out, "{catalog}").map_err(|e| LtmError::Io(e.to_string()))?;
        Ok(out)
    }

    pub fn export_file(&self, path: &Path) -> Result<(), LtmError> {
        std::fs::write(path, self.export_string()?).map_err(|e| LtmError::Io(e.to_string()))
    }

    /// Replace store contents with an exported dump.
    pub fn import_string(&self, text: &str) -> Result<(), LtmError> {
        #[derive(Deserialize)]
        #[serde(tag = "record", rename_all = "snake_case")]
        enum Record {
            Node(LtmNode),
            Edge(LtmEdge),
            Catalog {
                node_types: BTreeSet<String>,
                edge_types: BTreeSet<String>,
            },
        }

        let mut nodes = BTreeMap::new();
        let mut edges = BTreeMap::new();
        let mut catalog = SchemaCatalog::seeded();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(line)
                .map_err(|e| LtmError::Io(format!("line {}: {e}", lineno + 1)))?;
            match record {
                Record::Node(node) => {
                    nodes.insert(node.node_id, node);
                }
                Record::Edge(edge) => {
                    edges.insert(edge.edge_id, edge);
                }
                Record::Catalog {
                    node_types,
                    edge_types,
                } => {
                    catalog.node_types.extend(node_types);
                    catalog.edge_types.extend(edge_types);
                }
            }
        }
        for node in nodes.values() {
            catalog.node_types.insert(node.node_type.clone());
        }
        for edge in edges.values() {
            if !nodes.contains_key(&edge.src) || !nodes.contains_key(&edge.dst) {
                return Err(LtmError::Io(format!(
                    "edge {} references a missing node",
                    edge.edge_id
                )));
            }
            catalog.edge_types.insert(edge.edge_type.clone());
        }

        let mut inner = self.inner.write().unwrap();
        inner.next_node = nodes.keys().max().copied().unwrap_or(0);
        inner.next_edge = edges.keys().max().copied().unwrap_or(0);
        inner.nodes = nodes;
        inner.edges = edges;
        inner.catalog = catalog;
        Ok(())
    }

    pub fn import_file(&self, path: &Path) -> Result<(), LtmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LtmError::Io(e.to_string()))?;
        self.import_string(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> LtmStore {
        LtmStore::new(Arc::new(HashEmbedder::default()))
    }

    #[test]
    fn create_node_stores_embedding_and_registers_type() {
        let store = store();
        let id = store
            .create_node(
                "search_result",
                "Search for 'validate|keyword'",
                "Search results for 'validate|keyword' in the galaxy code, highlighting \
                 locations related to certificate validation and keyword checks.",
            )
            .unwrap();
        let node = store.get_node(id).unwrap();
        assert_eq!(node.node_type, "search_result");
        let norm: f64 = node.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert!(store.list_schema().node_types.contains("search_result"));

        store
            .create_node(
                "error",
                "Missing PyYAML dependency for collection validation",
                "Traceback indicates a ModuleNotFoundError: No module named 'yaml'.",
            )
            .unwrap();
        assert_eq!(store.nodes_of_type("error").len(), 1);
    }

    #[test]
    fn empty_label_rejected() {
        let store = store();
        assert!(matches!(
            store.create_node("concept", "", "x"),
            Err(LtmError::EmptyLabel)
        ));
    }

    #[test]
    fn edges_show_in_both_one_hop_subgraphs() {
        let store = store();
        let file = store
            .create_node("file", "src/lib.rs", "crate root")
            .unwrap();
        let func = store
            .create_node("function", "parse_input", "parses the input")
            .unwrap();
        store.create_edge(file, func, "contains").unwrap();

        for (node_type, label) in [("file", "src/lib.rs"), ("function", "parse_input")] {
            let hits = store
                .search_nodes(&RetrievalQuery {
                    node_type: node_type.into(),
                    query_label: label.into(),
                    top_n: 1,
                })
                .unwrap();
            assert_eq!(hits.len(), 1);
            assert_eq!(hits[0].one_hop.edges.len(), 1);
            assert_eq!(hits[0].one_hop.neighbors.len(), 1);
        }

        assert!(matches!(
            store.create_edge(file, 999, "contains"),
            Err(LtmError::UnknownNode(999))
        ));
        assert!(matches!(
            store.create_edge(file, func, "contains"),
            Err(LtmError::DuplicateEdge { .. })
        ));
        // Same endpoints with a different type is allowed.
        store.create_edge(file, func, "relates_to").unwrap();
    }

    #[test]
    fn schema_starts_seeded_and_only_grows() {
        let store = store();
        let fresh = store.list_schema();
        assert_eq!(fresh, SchemaCatalog::seeded());

        store.create_node("protocol", "handshake", "3-way").unwrap();
        assert!(store.list_schema().node_types.contains("protocol"));

        let node_types_before = store.list_schema().node_types;
        let a = store.create_node("concept", "alpha", "a").unwrap();
        let b = store.create_node("concept", "beta", "b").unwrap();
        store.create_edge(a, b, "relates_to").unwrap();
        assert_eq!(store.list_schema().node_types, node_types_before);

        // Deleting the last node of a type keeps the type.
        let id = store.create_node("ritual", "dance", "x").unwrap();
        store.delete_node(id).unwrap();
        assert!(store.list_schema().node_types.contains("ritual"));
    }

    #[test]
    fn exact_label_ranks_first_with_unit_score() {
        let store = store();
        store
            .create_node("concept", "memory graph retrieval", "topic A")
            .unwrap();
        store
            .create_node("concept", "sandbox snapshot caching", "topic B")
            .unwrap();
        let hits = store
            .search_nodes(&RetrievalQuery {
                node_type: "concept".into(),
                query_label: "memory graph retrieval".into(),
                top_n: 2,
            })
            .unwrap();
        assert_eq!(hits[0].node.label, "memory graph retrieval");
        assert!((hits[0].score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn top_n_matches_brute_force_oracle() {
        let provider = Arc::new(HashEmbedder::default());
        let store = LtmStore::new(provider.clone());
        let labels = [
            "collection name validation logic",
            "galaxy metadata schema checks",
            "keyword reserved name rejection",
            "certificate trust verification",
            "dependency resolution dataclasses",
            "cli entry points for galaxy init",
            "role management helpers",
            "python keyword identifier rules",
            "namespace format constraints",
            "validation regex definitions",
        ];
        for label in labels {
            store
                .create_node("code_understanding", label, "details")
                .unwrap();
        }
        let query = "validation of collection keywords";

        // Independent brute-force oracle over raw provider output.
        let qe = l2_normalize(provider.embed(query).unwrap());
        let mut expected: Vec<(f64, String)> = labels
            .iter()
            .map(|label| {
                let ne = l2_normalize(provider.embed(label).unwrap());
                (cosine(&qe, &ne), label.to_string())
            })
            .collect();
        expected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        let expected_top: Vec<String> = expected.iter().take(3).map(|(_, l)| l.clone()).collect();

        let hits = store
            .search_nodes(&RetrievalQuery {
                node_type: "code_understanding".into(),
                query_label: query.into(),
                top_n: 3,
            })
            .unwrap();
        let got: Vec<String> = hits.iter().map(|h| h.node.label.clone()).collect();
        assert_eq!(got, expected_top);
    }

    #[test]
    fn unknown_type_rejected() {
        let store = store();
        assert!(matches!(
            store.search_nodes(&RetrievalQuery {
                node_type: "nonexistent".into(),
                query_label: "x".into(),
                top_n: 1,
            }),
            Err(LtmError::UnknownNodeType(_))
        ));
    }

    #[test]
    fn grep_matches_symbols_and_rejects_bad_patterns() {
        let store = store();
        store
            .create_node(
                "code_understanding",
                "Logic around validate_collection_name and galaxy.yml checks",
                "notes",
            )
            .unwrap();
        store
            .create_node("file", "lib/ansible/galaxy/collection.py", "module file")
            .unwrap();

        let hits = store.grep_nodes("validate_collection_name").unwrap();
        assert_eq!(hits.len(), 1);

        assert!(store.grep_nodes("^$").unwrap().is_empty());
        assert!(matches!(
            store.grep_nodes("[unclosed"),
            Err(LtmError::MalformedPattern(_))
        ));
    }

    #[test]
    fn update_semantics_follow_the_label() {
        let store = store();
        let id = store.create_node("concept", "alpha beta", "v1").unwrap();
        let before = store.get_node(id).unwrap().embedding;

        store.update_node(id, None, Some("v2")).unwrap();
        let node = store.get_node(id).unwrap();
        assert_eq!(node.content, "v2");
        assert_eq!(node.embedding, before);

        store.update_node(id, Some("gamma delta"), None).unwrap();
        let node = store.get_node(id).unwrap();
        let expected = l2_normalize(store.provider().embed("gamma delta").unwrap());
        assert_eq!(node.embedding, expected);

        assert!(matches!(
            store.update_node(404, None, Some("x")),
            Err(LtmError::UnknownNode(404))
        ));
        assert!(matches!(
            store.update_node(id, Some(""), None),
            Err(LtmError::EmptyLabel)
        ));
    }

    #[test]
    fn delete_removes_incident_edges_and_search_visibility() {
        let store = store();
        let hub = store.create_node("module", "core", "hub").unwrap();
        for n in 0..3 {
            let leaf = store
                .create_node("function", format!("leaf_{n}").as_str(), "leaf")
                .unwrap();
            store.create_edge(hub, leaf, "contains").unwrap();
        }
        assert_eq!(store.edge_count(), 3);

        store.delete_node(hub).unwrap();
        assert_eq!(store.edge_count(), 0);
        assert!(store.check_referential_integrity());
        let hits = store
            .search_nodes(&RetrievalQuery {
                node_type: "module".into(),
                query_label: "core".into(),
                top_n: 5,
            })
            .unwrap();
        assert!(hits.is_empty());

        assert!(matches!(
            store.delete_node(hub),
            Err(LtmError::UnknownNode(_))
        ));
    }

    #[test]
    fn export_import_round_trips() {
        let store = store();
        let a = store.create_node("file", "a.rs", "file a").unwrap();
        let b = store.create_node("function", "run", "fn run").unwrap();
        store.create_edge(a, b, "contains").unwrap();
        store
            .create_node("protocol", "custom", "novel type")
            .unwrap();
        let dump = store.export_string().unwrap();

        let restored = LtmStore::new(Arc::new(HashEmbedder::default()));
        restored.import_string(&dump).unwrap();
        assert_eq!(restored.node_count(), 3);
        assert_eq!(restored.edge_count(), 1);
        assert!(restored.list_schema().node_types.contains("protocol"));
        assert_eq!(restored.export_string().unwrap(), dump);

        // New ids continue past imported ones.
        let next = restored.create_node("concept", "later", "x").unwrap();
        assert!(next > 3);
    }
}
