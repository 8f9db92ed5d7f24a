//! Deterministic fixtures shared by the test suites and the CLI examples:
//! a pre-populated analysis tool registry, sized registries for scaling
//! checks, and filesystem digest helpers.

use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::tools::{ParamSpec, ParamType, ToolManifest};

fn write_index(dir: &Path, summary: &str) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("INDEX.md"), format!("{summary}\n"))
}

fn write_tool(
    category_dir: &Path,
    name: &str,
    description: &str,
    interface: Vec<ParamSpec>,
    script: &str,
    environment: Option<&str>,
) -> io::Result<()> {
    let dir = category_dir.join(name);
    fs::create_dir_all(&dir)?;
    let manifest = ToolManifest {
        name: name.to_string(),
        description: description.to_string(),
        interface,
        dependencies: Vec::new(),
        environment: environment.map(str::to_string),
        entrypoint: "run.cmd".to_string(),
        timeout_seconds: 30.0,
        background_default: false,
    };
    fs::write(
        dir.join("tool.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    fs::write(dir.join("run.cmd"), script)?;

    // Keep the category summary in sync, mirroring create_tool.
    let index_path = category_dir.join("INDEX.md");
    let mut index = fs::read_to_string(&index_path).unwrap_or_default();
    if !index.ends_with('\n') && !index.is_empty() {
        index.push('\n');
    }
    index.push_str(&format!("- {name}: {description}\n"));
    fs::write(index_path, index)
}

/// Install the software-analysis toolkit registry used across the test
/// suites: static code-analysis tools plus dynamic fuzzing, coverage, and
/// debugger tool sets.
pub fn install_security_toolkit(root: &Path) -> io::Result<()> {
    fs::create_dir_all(root)?;

    let static_dir = root.join("static");
    write_index(
        &static_dir,
        "Static analysis: code property graph queries, call graph analysis, dataflow slicing, semantic code search.",
    )?;
    let code_analysis = static_dir.join("code_analysis");
    write_index(
        &code_analysis,
        "Code analysis tools backed by property-graph engines.",
    )?;
    write_tool(
        &code_analysis,
        "cpg_query",
        "Run a code property graph query over the target codebase.",
        vec![ParamSpec::required(
            "query",
            ParamType::String,
            "graph query to evaluate",
        )],
        "echo-args\n",
        None,
    )?;
    write_tool(
        &code_analysis,
        "callgraph",
        "Build and inspect call graphs for the target.",
        vec![ParamSpec::required(
            "symbol",
            ParamType::String,
            "root symbol of the call graph",
        )],
        "echo callgraph rooted at {symbol}\n",
        None,
    )?;
    write_tool(
        &code_analysis,
        "slice_dataflow",
        "Dataflow-based program slicing for a chosen symbol.",
        vec![ParamSpec::required(
            "symbol",
            ParamType::String,
            "symbol to slice on",
        )],
        "echo slice for {symbol}\n",
        None,
    )?;
    write_tool(
        &code_analysis,
        "code_search",
        "Semantic-aware code search across the repository.",
        vec![ParamSpec::required(
            "pattern",
            ParamType::String,
            "search pattern",
        )],
        "echo search hits for {pattern}\n",
        None,
    )?;

    let dynamic_dir = root.join("dynamic");
    write_index(
        &dynamic_dir,
        "Dynamic analysis: fuzzing, coverage, and debugging tool sets.",
    )?;

    let fuzzing = dynamic_dir.join("fuzzing");
    write_index(
        &fuzzing,
        "Fuzzing utilities: customizable seed generation, mutation, and scoring.",
    )?;
    write_tool(
        &fuzzing,
        "seed_gen",
        "Generate seed inputs for a fuzz target.",
        vec![ParamSpec::optional(
            "target",
            ParamType::String,
            "fuzz target name",
        )],
        "echo seed corpus ready\n",
        None,
    )?;
    write_tool(
        &fuzzing,
        "mutate_seed",
        "Mutate existing seed inputs with customizable strategies.",
        vec![ParamSpec::optional(
            "strategy",
            ParamType::String,
            "mutation strategy",
        )],
        "echo mutated with {strategy}\n",
        None,
    )?;
    write_tool(
        &fuzzing,
        "score_seeds",
        "Score seeds by coverage gain and crash potential.",
        vec![],
        "echo seeds scored\n",
        None,
    )?;

    let coverage = dynamic_dir.join("coverage");
    write_index(
        &coverage,
        "Coverage tooling: query test case coverage, generate detailed reports.",
    )?;
    write_tool(
        &coverage,
        "coverage_report",
        "Generate detailed coverage reports for test cases.",
        vec![ParamSpec::optional(
            "format",
            ParamType::String,
            "report format",
        )],
        "echo coverage report generated\n",
        None,
    )?;

    let debugger = dynamic_dir.join("debugger");
    write_index(
        &debugger,
        "Debugger tool set: breakpoints, program state inspection, execution tracing.",
    )?;
    fs::write(
        debugger.join("env.json"),
        serde_json::to_string_pretty(&crate::sandbox::EnvSpec {
            env_id: "debugger".into(),
            base: "none".into(),
            setup_commands: vec!["echo debugger environment initialized".into()],
            workspace_mount: "/workspace".into(),
        })
        .expect("env spec serializes"),
    )?;
    write_tool(
        &debugger,
        "set_file",
        "Load a target binary into the debugger.",
        vec![ParamSpec::required(
            "path",
            ParamType::String,
            "binary to load",
        )],
        "echo file_loaded: {path}\n",
        Some("debugger"),
    )?;
    write_tool(
        &debugger,
        "set_input_file",
        "Set the input file passed to the debugged program.",
        vec![ParamSpec::required(
            "path",
            ParamType::String,
            "input file path",
        )],
        "echo input_set: {path}\n",
        Some("debugger"),
    )?;
    write_tool(
        &debugger,
        "set_breakpoint",
        "Set breakpoints, inspect program states at the stop site.",
        vec![ParamSpec::required(
            "location",
            ParamType::String,
            "function or file:line",
        )],
        "echo breakpoint_set: {location}\n",
        Some("debugger"),
    )?;
    write_tool(
        &debugger,
        "step_control",
        "Step, continue, and otherwise control traced program execution.",
        vec![ParamSpec::required(
            "action",
            ParamType::String,
            "step|next|continue|finish",
        )],
        "echo step: {action}\n",
        Some("debugger"),
    )?;
    write_tool(
        &debugger,
        "execute_program",
        "Run the loaded program under the debugger with custom debugger commands.",
        vec![ParamSpec::optional(
            "commands",
            ParamType::List,
            "extra debugger commands",
        )],
        "echo program_executed\n",
        Some("debugger"),
    )?;

    Ok(())
}

/// Install a registry with fixed top-level categories and `total_tools`
/// generated tools spread below them. Two installs with different totals
/// have identical top levels.
pub fn install_sized_registry(root: &Path, total_tools: usize) -> io::Result<()> {
    fs::create_dir_all(root)?;
    let alpha = root.join("alpha");
    write_index(&alpha, "Alpha utilities: generated fixture tools.")?;
    let beta = root.join("beta");
    write_index(&beta, "Beta utilities: generated fixture tools.")?;
    let alpha_bulk = alpha.join("bulk");
    write_index(&alpha_bulk, "Bulk storage for generated alpha tools.")?;
    let beta_bulk = beta.join("bulk");
    write_index(&beta_bulk, "Bulk storage for generated beta tools.")?;

    for n in 0..total_tools {
        let parent = if n % 2 == 0 { &alpha_bulk } else { &beta_bulk };
        write_tool(
            parent,
            &format!("tool_{n:03}"),
            &format!("Generated fixture tool number {n}."),
            vec![],
            "echo ok\n",
            None,
        )?;
    }
    Ok(())
}

/// Order-independent digest of a directory tree (relative paths + bytes).
/// Two directories with identical contents produce identical digests.
pub fn dir_digest(root: &Path) -> String {
    fn collect(root: &Path, dir: &Path, entries: &mut Vec<(String, Vec<u8>)>) {
        let Ok(read) = fs::read_dir(dir) else { return };
        for entry in read.flatten() {
            let path = entry.path();
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .to_string_lossy()
                .into_owned();
            if path.is_dir() {
                entries.push((format!("{rel}/"), Vec::new()));
                collect(root, &path, entries);
            } else {
                entries.push((rel, fs::read(&path).unwrap_or_default()));
            }
        }
    }
    let mut entries = Vec::new();
    collect(root, root, &mut entries);
    entries.sort();
    let mut hasher = Sha256::new();
    for (rel, bytes) in entries {
        hasher.update(rel.as_bytes());
        hasher.update([0]);
        hasher.update(&bytes);
        hasher.update([0xff]);
    }
    format!("{:x}", hasher.finalize())
}
