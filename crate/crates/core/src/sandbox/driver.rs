//! Driver seam for sandbox backends, plus the in-process local driver used
//! by the test suite. A container-backed driver plugs in behind the same
//! contract.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::Value;

use super::{EnvSpec, ExecResult, SandboxError};

/// Backend contract: provision raw environments, run commands, snapshot and
/// restore filesystem state, tear down.
pub trait SandboxDriver: Send + Sync {
    /// Create a fresh environment for `spec`. Setup commands are NOT run here;
    /// the runtime drives them through `exec` so it can count and cache them.
    fn provision(&self, spec: &EnvSpec) -> Result<String, SandboxError>;

    /// Run one command to completion inside the environment.
    fn exec(&self, token: &str, spec: &EnvSpec, command: &str) -> Result<ExecResult, SandboxError>;

    /// Capture environment state (excluding the shared workspace).
    fn snapshot(&self, token: &str) -> Result<String, SandboxError>;

    /// Materialize a fresh environment from a snapshot token.
    fn restore(&self, spec: &EnvSpec, snapshot_token: &str) -> Result<String, SandboxError>;

    fn destroy(&self, token: &str) -> Result<(), SandboxError>;

    /// Command line that executes a tool entrypoint with a JSON args document.
    fn tool_command(&self, entrypoint_host_path: &str, args_json: &str) -> String {
        format!("run-script {entrypoint_host_path} {args_json}")
    }
}

/// In-process directory-per-sandbox driver.
///
/// Each sandbox is a private host directory; paths under the environment's
/// `workspace_mount` resolve into one shared workspace directory instead.
/// Commands are interpreted by a small built-in language rather than a shell:
///
/// ```text
/// true                        exit 0
/// exit CODE                   exit CODE
/// fail MESSAGE...             exit 1, MESSAGE on stderr
/// echo TEXT...                TEXT on stdout
/// echo-args                   the invocation's args JSON on stdout (scripts only)
/// sleep SECONDS               block for SECONDS (fractional ok)
/// write PATH TEXT...          write TEXT to PATH
/// read PATH                   file contents on stdout, exit 1 if missing
/// run-script PATH ARGS_JSON   interpret PATH line by line with {param} substitution
/// ```
pub struct LocalDriver {
    base_dir: PathBuf,
    workspace_dir: PathBuf,
    next_id: AtomicU64,
    execution_log: Mutex<Vec<String>>,
}

impl LocalDriver {
    pub fn new(base_dir: &Path, workspace_dir: &Path) -> Result<Self, SandboxError> {
        fs::create_dir_all(base_dir).map_err(io_err)?;
        fs::create_dir_all(workspace_dir).map_err(io_err)?;
        Ok(Self {
            base_dir: base_dir.to_path_buf(),
            workspace_dir: workspace_dir.to_path_buf(),
            next_id: AtomicU64::new(1),
            execution_log: Mutex::new(Vec::new()),
        })
    }

    /// Every command this driver has executed, in submission order. The
    /// cache-correctness oracles count setup commands here.
    pub fn execution_log(&self) -> Vec<String> {
        self.execution_log.lock().unwrap().clone()
    }

    pub fn workspace_dir(&self) -> &Path {
        &self.workspace_dir
    }

    fn fresh_dir(&self, kind: &str) -> Result<PathBuf, SandboxError> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let dir = self.base_dir.join(format!("{kind}-{id}"));
        fs::create_dir_all(&dir).map_err(io_err)?;
        Ok(dir)
    }

    /// Resolve a path from inside the environment onto the host: anything
    /// under the workspace mount goes to the shared workspace, everything
    /// else stays inside the sandbox's private directory.
    fn resolve(&self, token: &str, spec: &EnvSpec, path: &str) -> PathBuf {
        let mount = spec.workspace_mount.trim_end_matches('/');
        if !mount.is_empty() && (path == mount || path.starts_with(&format!("{mount}/"))) {
            let rest = path[mount.len()..].trim_start_matches('/');
            return self.workspace_dir.join(rest);
        }
        Path::new(token).join(path.trim_start_matches('/'))
    }

    fn run_line(
        &self,
        token: &str,
        spec: &EnvSpec,
        line: &str,
        args_json: Option<&str>,
    ) -> Result<ExecResult, SandboxError> {
        let line = line.trim();
        let (cmd, rest) = match line.split_once(char::is_whitespace) {
            Some((c, r)) => (c, r.trim()),
            None => (line, ""),
        };
        let result = match cmd {
            "true" | ":" => ExecResult::success(""),
            "exit" => {
                let code: i32 = rest.parse().unwrap_or(1);
                ExecResult {
                    exit_status: code,
                    stdout: String::new(),
                    stderr: String::new(),
                }
            }
            "fail" => ExecResult {
                exit_status: 1,
                stdout: String::new(),
                stderr: format!("{rest}\n"),
            },
            "echo" => ExecResult::success(&format!("{rest}\n")),
            "echo-args" => ExecResult::success(&format!("{}\n", args_json.unwrap_or("{}"))),
            "sleep" => {
                let secs: f64 = rest.parse().unwrap_or(0.0);
                std::thread::sleep(Duration::from_secs_f64(secs.max(0.0)));
                ExecResult::success("")
            }
            "write" => {
                let (path, text) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                let host = self.resolve(token, spec, path);
                if let Some(parent) = host.parent() {
                    fs::create_dir_all(parent).map_err(io_err)?;
                }
                fs::write(&host, text).map_err(io_err)?;
                ExecResult::success("")
            }
            "read" => {
                let host = self.resolve(token, spec, rest);
                match fs::read_to_string(&host) {
                    Ok(text) => ExecResult::success(&text),
                    Err(_) => ExecResult {
                        exit_status: 1,
                        stdout: String::new(),
                        stderr: format!("read: no such file: {rest}\n"),
                    },
                }
            }
            "run-script" => {
                let (path, args) = rest.split_once(char::is_whitespace).unwrap_or((rest, "{}"));
                return self.run_script(token, spec, path, args.trim());
            }
            "" => ExecResult::success(""),
            other => ExecResult {
                exit_status: 127,
                stdout: String::new(),
                stderr: format!("command not found: {other}\n"),
            },
        };
        Ok(result)
    }

    fn run_script(
        &self,
        token: &str,
        spec: &EnvSpec,
        host_path: &str,
        args_json: &str,
    ) -> Result<ExecResult, SandboxError> {
        let script = fs::read_to_string(host_path)
            .map_err(|e| SandboxError::Io(format!("script {host_path}: {e}")))?;
        let args: Value = serde_json::from_str(args_json).unwrap_or(Value::Null);
        let mut stdout = String::new();
        let mut stderr = String::new();
        for raw_line in script.lines() {
            let line = substitute_args(raw_line, &args);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let step = self.run_line(token, spec, &line, Some(args_json))?;
            stdout.push_str(&step.stdout);
            stderr.push_str(&step.stderr);
            if step.exit_status != 0 {
                return Ok(ExecResult {
                    exit_status: step.exit_status,
                    stdout,
                    stderr,
                });
            }
        }
        Ok(ExecResult {
            exit_status: 0,
            stdout,
            stderr,
        })
    }
}

/// Replace `{name}` placeholders with values from the args document.
/// String values substitute raw; everything else as compact JSON.
fn substitute_args(line: &str, args: &Value) -> String {
    let mut out = line.to_string();
    if let Value::Object(map) = args {
        for (key, value) in map {
            let placeholder = format!("{{{key}}}");
            if out.contains(&placeholder) {
                let rendered = match value {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                out = out.replace(&placeholder, &rendered);
            }
        }
    }
    out
}

impl SandboxDriver for LocalDriver {
    fn provision(&self, _spec: &EnvSpec) -> Result<String, SandboxError> {
        Ok(self.fresh_dir("sbx")?.to_string_lossy().into_owned())
    }

    fn exec(&self, token: &str, spec: &EnvSpec, command: &str) -> Result<ExecResult, SandboxError> {
        self.execution_log.lock().unwrap().push(command.to_string());
        self.run_line(token, spec, command, None)
    }

    fn snapshot(&self, token: &str) -> Result<String, SandboxError> {
        let dest = self.fresh_dir("snap")?;
        copy_tree(Path::new(token), &dest)?;
        Ok(dest.to_string_lossy().into_owned())
    }

    fn restore(&self, _spec: &EnvSpec, snapshot_token: &str) -> Result<String, SandboxError> {
        let dest = self.fresh_dir("sbx")?;
        copy_tree(Path::new(snapshot_token), &dest)?;
        Ok(dest.to_string_lossy().into_owned())
    }

    fn destroy(&self, token: &str) -> Result<(), SandboxError> {
        if Path::new(token).starts_with(&self.base_dir) {
            let _ = fs::remove_dir_all(token);
        }
        Ok(())
    }
}

fn copy_tree(src: &Path, dest: &Path) -> Result<(), SandboxError> {
    fs::create_dir_all(dest).map_err(io_err)?;
    for entry in fs::read_dir(src).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let target = dest.join(entry.file_name());
        if entry.file_type().map_err(io_err)?.is_dir() {
            copy_tree(&entry.path(), &target)?;
        } else {
            fs::copy(entry.path(), &target).map_err(io_err)?;
        }
    }
    Ok(())
}

fn io_err(e: std::io::Error) -> SandboxError {
    SandboxError::Io(e.to_string())
}
