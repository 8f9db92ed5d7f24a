//! A self-programming agent runtime kernel.
//!
//! Agents running on a pluggable model backend can create and manage
//! sub-agents (vertical delegation, parallel ensembles with a shared message
//! board), synthesize and register new tools into a sandboxed hierarchical
//! registry, and read/write a two-tier graph memory: a per-run execution
//! graph plus a cross-task typed knowledge graph fronted by a dedicated
//! memory agent. A deterministic scripted backend makes every mechanism
//! testable without a live model.

pub mod cli;
pub mod config;
pub mod gateway;
pub mod kernel;
pub mod ltm;
pub mod memory_agent;
pub mod sandbox;
pub mod stm;
pub mod testkit;
pub mod tools;
pub mod topology;

pub use config::{load_config, KernelConfig};
pub use gateway::{
    estimate_tokens, Gateway, ModelBackend, ModelRequest, ModelResponse, ScriptedBackend,
    ScriptedTranscript,
};
pub use kernel::{Kernel, KernelError, RunLimits, RunResult};
pub use ltm::{HashEmbedder, LtmStore, RetrievalQuery};
pub use memory_agent::{MemoryAnswer, MemoryQuery, StoreCandidate, StoreDecision};
pub use sandbox::{EnvSpec, InvocationHandle, LocalDriver, SandboxRuntime};
pub use stm::StmGraph;
pub use tools::{ToolId, ToolManifest, ToolRegistry, ToolScope};
pub use topology::{AgentPool, AgentResponse, AgentSpec};
