//! Operator command line: run agents, inspect the pool and registry, query
//! memory, and export memory graphs.

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, KernelConfig};
use crate::gateway::ScriptedTranscript;
use crate::kernel::{Kernel, KernelError, RunLimits};
use crate::memory_agent::MemoryQuery;
use crate::tools::ToolId;
use crate::topology::AgentSpec;

#[derive(Parser, Debug)]
#[command(
    name = "agentk",
    about = "Self-programming agent runtime kernel",
    disable_help_subcommand = true
)]
struct Cli {
    /// JSON config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    registry_root: Option<PathBuf>,
    /// Shared workspace directory mounted into every sandbox.
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Long-term memory file loaded at start.
    #[arg(long, global = true)]
    ltm: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Execute a root agent on a task.
    Run(RunArgs),
    /// Inspect the sub-agent pool.
    Agents {
        #[command(subcommand)]
        command: AgentsCommand,
    },
    /// Inspect the tool registry.
    Tools {
        #[command(subcommand)]
        command: ToolsCommand,
    },
    /// Query and export the memory tiers.
    Mem {
        #[command(subcommand)]
        command: MemCommand,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Agent spec file (JSON, pool wire shape).
    #[arg(long)]
    spec: PathBuf,
    /// Task text handed to the agent.
    #[arg(long)]
    task: String,
    /// Scripted transcript file; registers backend id "scripted".
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    max_steps: u64,
}

#[derive(Subcommand, Debug)]
enum AgentsCommand {
    /// List pooled agents, optionally filtered by substring.
    List {
        #[arg(long)]
        filter: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
enum ToolsCommand {
    /// Keyword search across the registry.
    Search { keyword: String },
    /// Show a tool's full manifest.
    Show { path: String },
}

#[derive(Subcommand, Debug)]
enum MemCommand {
    /// Ask the memory agent a natural-language question.
    Query { text: String },
    /// Export one run's short-term subgraph as JSON lines.
    ExportStm { run: u64, file: PathBuf },
    /// Export the long-term store as JSON lines.
    ExportLtm { file: PathBuf },
}

/// Parse argv and execute against a fresh kernel. Returns the process exit
/// code and a textual report: 0 success, 1 domain error, 2 usage error.
pub fn dispatch(argv: &[String]) -> (i32, String) {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            return (code, err.to_string());
        }
    };
    let config = match build_config(&cli) {
        Ok(config) => config,
        Err(message) => return (1, message),
    };
    let kernel = match Kernel::new(config) {
        Ok(kernel) => kernel,
        Err(err) => return (1, err.to_string()),
    };
    match execute(&kernel, cli.command) {
        Ok(report) => (0, report),
        Err(err) => (1, err.to_string()),
    }
}

/// Like `dispatch`, but runs against an existing kernel so state persists
/// across commands. Global config flags are ignored here.
pub fn dispatch_with_kernel(kernel: &Kernel, argv: &[String]) -> (i32, String) {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            return (code, err.to_string());
        }
    };
    match execute(kernel, cli.command) {
        Ok(report) => (0, report),
        Err(err) => (1, err.to_string()),
    }
}

fn build_config(cli: &Cli) -> Result<KernelConfig, String> {
    let mut config = match &cli.config {
        Some(path) => load_config(path).map_err(|e| e.to_string())?,
        None => KernelConfig::new(&PathBuf::from("./registry"), &PathBuf::from("./workspace")),
    };
    if let Some(registry_root) = &cli.registry_root {
        config.registry_root = registry_root.clone();
    }
    if let Some(workspace) = &cli.workspace {
        config.workspace = workspace.clone();
    }
    if let Some(ltm) = &cli.ltm {
        config.ltm_path = Some(ltm.clone());
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn execute(kernel: &Kernel, command: Command) -> Result<String, KernelError> {
    match command {
        Command::Run(args) => {
            if let Some(transcript_path) = &args.transcript {
                let transcript = ScriptedTranscript::from_file(transcript_path)?;
                kernel.register_scripted("scripted", transcript)?;
                kernel.set_default_backend("scripted");
            }
            let text = std::fs::read_to_string(&args.spec).map_err(|e| {
                KernelError::Protocol(format!("spec file {}: {e}", args.spec.display()))
            })?;
            let spec: AgentSpec = serde_json::from_str(&text)
                .map_err(|e| KernelError::Protocol(format!("spec parse: {e}")))?;
            let result = kernel.run_root(
                &spec,
                &args.task,
                RunLimits {
                    max_steps: args.max_steps,
                },
            )?;
            Ok(format!(
                "run {} finished after {} events\nfinal: {}",
                result.run_id, result.event_count, result.final_text
            ))
        }
        Command::Agents {
            command: AgentsCommand::List { filter },
        } => {
            let report = kernel.pool().list(filter.as_deref());
            let mut out = report.message.clone();
            for agent in &report.agents {
                out.push_str(&format!("\n{} — {}", agent.agent_name, agent.description));
            }
            Ok(out)
        }
        Command::Tools { command } => match command {
            ToolsCommand::Search { keyword } => {
                let hits = kernel.registry().search_tools(&keyword);
                if hits.is_empty() {
                    return Ok(format!("no tools matched '{keyword}'"));
                }
                Ok(hits
                    .iter()
                    .map(|(id, description)| format!("{} — {}", id.0, description))
                    .collect::<Vec<_>>()
                    .join("\n"))
            }
            ToolsCommand::Show { path } => {
                let manifest = kernel.registry().describe_tool(&ToolId(path))?;
                Ok(serde_json::to_string_pretty(&manifest)
                    .map_err(|e| KernelError::Protocol(e.to_string()))?)
            }
        },
        Command::Mem { command } => match command {
            MemCommand::Query { text } => {
                let answer = kernel.handle_query(&MemoryQuery {
                    requester: "cli".into(),
                    text,
                })?;
                Ok(serde_json::to_string_pretty(&answer)
                    .map_err(|e| KernelError::Protocol(e.to_string()))?)
            }
            MemCommand::ExportStm { run, file } => {
                let dump = kernel.stm().export(Some(run))?;
                std::fs::write(&file, dump)
                    .map_err(|e| KernelError::Protocol(format!("{}: {e}", file.display())))?;
                Ok(format!("exported run {run} to {}", file.display()))
            }
            MemCommand::ExportLtm { file } => {
                kernel.ltm().export_file(&file)?;
                Ok(format!("exported long-term memory to {}", file.display()))
            }
        },
    }
}
