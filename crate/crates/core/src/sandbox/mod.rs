//! Sandbox runtime: isolated per-toolset execution environments with a
//! shared workspace, snapshot caching of initialized state, and asynchronous
//! invocation handles.

mod driver;

pub use driver::{LocalDriver, SandboxDriver};

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("sandbox driver unavailable: {0}")]
    DriverUnavailable(String),
    #[error("setup command failed: `{command}`: {output}")]
    SetupFailed { command: String, output: String },
    #[error("sandbox '{0}' is not live")]
    SandboxDead(String),
    #[error("unknown invocation handle '{0}'")]
    UnknownHandle(String),
    #[error("invocation '{0}' has not finished")]
    NotFinished(String),
    #[error("sandbox '{0}' is busy with a running invocation")]
    Busy(String),
    #[error("unknown snapshot key '{0}'")]
    UnknownSnapshot(String),
    #[error("sandbox io error: {0}")]
    Io(String),
}

/// Environment requirements for one tool set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: String,
    pub base: String,
    #[serde(default)]
    pub setup_commands: Vec<String>,
    pub workspace_mount: String,
}

impl EnvSpec {
    /// Minimal environment with no setup, workspace mounted at `/workspace`.
    pub fn bare(env_id: &str) -> Self {
        Self {
            env_id: env_id.to_string(),
            base: "none".to_string(),
            setup_commands: Vec::new(),
            workspace_mount: "/workspace".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SandboxId(pub String);

impl std::fmt::Display for SandboxId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Digest over env id plus the ordered setup/exec history; equal keys mean
/// interchangeable restored state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SnapshotKey(pub String);

impl std::fmt::Display for SnapshotKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub exit_status: i32,
    pub stdout: String,
    pub stderr: String,
}

impl ExecResult {
    pub fn success(stdout: &str) -> Self {
        Self {
            exit_status: 0,
            stdout: stdout.to_string(),
            stderr: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandleState {
    Pending,
    Running,
    Done,
    Failed,
    Terminated,
}

impl HandleState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            HandleState::Done | HandleState::Failed | HandleState::Terminated
        )
    }
}

/// Process-id-like token for a background invocation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InvocationHandle {
    pub handle_id: String,
}

#[derive(Debug, Clone)]
pub struct HandleStatus {
    pub state: HandleState,
    pub started_at_ms: u64,
    pub finished_at_ms: Option<u64>,
}

pub enum ExecOutcome {
    Completed(ExecResult),
    Offloaded(InvocationHandle),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sync,
    Background,
}

pub struct ExecLimits {
    pub timeout_seconds: f64,
}

struct SandboxEntry {
    spec: EnvSpec,
    driver_token: String,
    history: Vec<String>,
    alive: bool,
    running: Arc<AtomicUsize>,
    queue: Arc<Mutex<()>>,
}

struct SnapshotEntry {
    spec: EnvSpec,
    driver_token: String,
    history: Vec<String>,
}

struct HandleEntry {
    state: HandleState,
    result: Option<ExecResult>,
    error: Option<String>,
    started_at_ms: u64,
    finished_at_ms: Option<u64>,
}

#[derive(Default)]
struct HandleTable {
    entries: Mutex<HashMap<String, HandleEntry>>,
    changed: Condvar,
}

impl HandleTable {
    /// Transition respecting the lifecycle DAG: absorbing states never change.
    fn transition(&self, id: &str, next: HandleState, now_ms: u64) -> bool {
        let mut entries = self.entries.lock().unwrap();
        let Some(entry) = entries.get_mut(id) else {
            return false;
        };
        if entry.state.is_terminal() {
            return false;
        }
        entry.state = next;
        if next.is_terminal() {
            entry.finished_at_ms = Some(now_ms);
        }
        self.changed.notify_all();
        true
    }

    fn complete(&self, id: &str, outcome: Result<ExecResult, String>, now_ms: u64) {
        let mut entries = self.entries.lock().unwrap();
        let Some(entry) = entries.get_mut(id) else {
            return;
        };
        // A terminate that won the race keeps the handle terminated.
        if entry.state.is_terminal() {
            return;
        }
        match outcome {
            Ok(result) => {
                entry.result = Some(result);
                entry.state = HandleState::Done;
            }
            Err(message) => {
                entry.error = Some(message);
                entry.state = HandleState::Failed;
            }
        }
        entry.finished_at_ms = Some(now_ms);
        self.changed.notify_all();
    }
}

/// The runtime: provision with snapshot reuse, execute with timeout offload,
/// poll/fetch/terminate handles, commit explicit checkpoints.
pub struct SandboxRuntime {
    driver: Arc<dyn SandboxDriver>,
    sandboxes: Mutex<HashMap<String, SandboxEntry>>,
    snapshots: Mutex<HashMap<String, SnapshotEntry>>,
    handles: Arc<HandleTable>,
    next_sandbox: AtomicU64,
    epoch: Instant,
}

impl SandboxRuntime {
    pub fn new(driver: Arc<dyn SandboxDriver>) -> Self {
        Self {
            driver,
            sandboxes: Mutex::new(HashMap::new()),
            snapshots: Mutex::new(HashMap::new()),
            handles: Arc::new(HandleTable::default()),
            next_sandbox: AtomicU64::new(1),
            epoch: Instant::now(),
        }
    }

    fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    /// Command line that runs a tool entrypoint with a JSON args document,
    /// in whatever dialect the active driver understands.
    pub fn tool_command(&self, entrypoint_host_path: &str, args_json: &str) -> String {
        self.driver.tool_command(entrypoint_host_path, args_json)
    }

    fn digest(env_id: &str, history: &[String]) -> SnapshotKey {
        let mut hasher = Sha256::new();
        hasher.update(env_id.as_bytes());
        for command in history {
            hasher.update([0x1f]);
            hasher.update(command.as_bytes());
        }
        SnapshotKey(format!("{:x}", hasher.finalize()))
    }

    fn register_sandbox(
        &self,
        spec: EnvSpec,
        driver_token: String,
        history: Vec<String>,
    ) -> SandboxId {
        let id = SandboxId(format!(
            "{}-{}",
            spec.env_id,
            self.next_sandbox.fetch_add(1, Ordering::SeqCst)
        ));
        self.sandboxes.lock().unwrap().insert(
            id.0.clone(),
            SandboxEntry {
                spec,
                driver_token,
                history,
                alive: true,
                running: Arc::new(AtomicUsize::new(0)),
                queue: Arc::new(Mutex::new(())),
            },
        );
        id
    }

    /// Provision an environment. A cached snapshot for the same env id and
    /// setup digest is restored instead of re-running setup commands.
    pub fn provision(&self, spec: &EnvSpec) -> Result<SandboxId, SandboxError> {
        let key = Self::digest(&spec.env_id, &spec.setup_commands);
        if let Some(snap) = self.snapshots.lock().unwrap().get(&key.0) {
            let token = self.driver.restore(spec, &snap.driver_token)?;
            return Ok(self.register_sandbox(spec.clone(), token, snap.history.clone()));
        }

        let token = self.driver.provision(spec)?;
        for command in &spec.setup_commands {
            let result = self.driver.exec(&token, spec, command)?;
            if result.exit_status != 0 {
                let _ = self.driver.destroy(&token);
                return Err(SandboxError::SetupFailed {
                    command: command.clone(),
                    output: format!("{}{}", result.stdout, result.stderr),
                });
            }
        }
        let snapshot_token = self.driver.snapshot(&token)?;
        self.snapshots.lock().unwrap().insert(
            key.0.clone(),
            SnapshotEntry {
                spec: spec.clone(),
                driver_token: snapshot_token,
                history: spec.setup_commands.clone(),
            },
        );
        Ok(self.register_sandbox(spec.clone(), token, spec.setup_commands.clone()))
    }

    /// Provision a fresh sandbox from a previously committed snapshot key.
    pub fn provision_from_snapshot(&self, key: &SnapshotKey) -> Result<SandboxId, SandboxError> {
        let snapshots = self.snapshots.lock().unwrap();
        let snap = snapshots
            .get(&key.0)
            .ok_or_else(|| SandboxError::UnknownSnapshot(key.0.clone()))?;
        let token = self.driver.restore(&snap.spec, &snap.driver_token)?;
        let (spec, history) = (snap.spec.clone(), snap.history.clone());
        drop(snapshots);
        Ok(self.register_sandbox(spec, token, history))
    }

    pub fn destroy(&self, sandbox: &SandboxId) -> Result<(), SandboxError> {
        let mut sandboxes = self.sandboxes.lock().unwrap();
        let entry = sandboxes
            .get_mut(&sandbox.0)
            .ok_or_else(|| SandboxError::SandboxDead(sandbox.0.clone()))?;
        entry.alive = false;
        self.driver.destroy(&entry.driver_token)
    }

    /// Run a command. Sync invocations that outlive their time limit are
    /// offloaded and return a handle instead of blocking the caller.
    pub fn exec(
        &self,
        sandbox: &SandboxId,
        command: &str,
        limits: ExecLimits,
        mode: ExecMode,
    ) -> Result<ExecOutcome, SandboxError> {
        let (driver_token, spec, running, queue) = {
            let mut sandboxes = self.sandboxes.lock().unwrap();
            let entry = sandboxes
                .get_mut(&sandbox.0)
                .ok_or_else(|| SandboxError::SandboxDead(sandbox.0.clone()))?;
            if !entry.alive {
                return Err(SandboxError::SandboxDead(sandbox.0.clone()));
            }
            entry.history.push(command.to_string());
            (
                entry.driver_token.clone(),
                entry.spec.clone(),
                Arc::clone(&entry.running),
                Arc::clone(&entry.queue),
            )
        };

        let handle_id = format!("inv-{:032x}", rand::random::<u128>());
        self.handles.entries.lock().unwrap().insert(
            handle_id.clone(),
            HandleEntry {
                state: HandleState::Pending,
                result: None,
                error: None,
                started_at_ms: self.now_ms(),
                finished_at_ms: None,
            },
        );

        running.fetch_add(1, Ordering::SeqCst);
        let handles = Arc::clone(&self.handles);
        let driver = Arc::clone(&self.driver);
        let command = command.to_string();
        let worker_handle_id = handle_id.clone();
        let epoch = self.epoch;
        std::thread::spawn(move || {
            // One invocation at a time per sandbox.
            let _slot = queue.lock().unwrap();
            let now = || epoch.elapsed().as_millis() as u64;
            if handles.transition(&worker_handle_id, HandleState::Running, now()) {
                let outcome = driver
                    .exec(&driver_token, &spec, &command)
                    .map_err(|e| e.to_string());
                handles.complete(&worker_handle_id, outcome, now());
            }
            running.fetch_sub(1, Ordering::SeqCst);
        });

        let handle = InvocationHandle { handle_id };
        if mode == ExecMode::Background {
            return Ok(ExecOutcome::Offloaded(handle));
        }

        let deadline = Instant::now() + Duration::from_secs_f64(limits.timeout_seconds.max(0.0));
        let mut entries = self.handles.entries.lock().unwrap();
        loop {
            let state = entries
                .get(&handle.handle_id)
                .map(|e| e.state)
                .unwrap_or(HandleState::Failed);
            if state.is_terminal() {
                let entry = entries.get(&handle.handle_id).unwrap();
                return Ok(ExecOutcome::Completed(materialize_result(entry)));
            }
            let now = Instant::now();
            if now >= deadline {
                // Time limit reached: offload, keep the invocation running.
                return Ok(ExecOutcome::Offloaded(handle));
            }
            let (guard, _timeout) = self
                .handles
                .changed
                .wait_timeout(entries, deadline - now)
                .unwrap();
            entries = guard;
        }
    }

    pub fn poll(&self, handle: &InvocationHandle) -> Result<HandleState, SandboxError> {
        self.handles
            .entries
            .lock()
            .unwrap()
            .get(&handle.handle_id)
            .map(|e| e.state)
            .ok_or_else(|| SandboxError::UnknownHandle(handle.handle_id.clone()))
    }

    pub fn status(&self, handle: &InvocationHandle) -> Result<HandleStatus, SandboxError> {
        self.handles
            .entries
            .lock()
            .unwrap()
            .get(&handle.handle_id)
            .map(|e| HandleStatus {
                state: e.state,
                started_at_ms: e.started_at_ms,
                finished_at_ms: e.finished_at_ms,
            })
            .ok_or_else(|| SandboxError::UnknownHandle(handle.handle_id.clone()))
    }

    /// Result of a finished invocation; identical bytes on every fetch.
    pub fn fetch_result(&self, handle: &InvocationHandle) -> Result<ExecResult, SandboxError> {
        let entries = self.handles.entries.lock().unwrap();
        let entry = entries
            .get(&handle.handle_id)
            .ok_or_else(|| SandboxError::UnknownHandle(handle.handle_id.clone()))?;
        match entry.state {
            HandleState::Done | HandleState::Failed => Ok(materialize_result(entry)),
            _ => Err(SandboxError::NotFinished(handle.handle_id.clone())),
        }
    }

    /// Block until the invocation reaches a terminal state, then fetch.
    pub fn wait_result(&self, handle: &InvocationHandle) -> Result<ExecResult, SandboxError> {
        let mut entries = self.handles.entries.lock().unwrap();
        loop {
            let state = entries
                .get(&handle.handle_id)
                .ok_or_else(|| SandboxError::UnknownHandle(handle.handle_id.clone()))?
                .state;
            if state.is_terminal() {
                drop(entries);
                return self.fetch_result(handle);
            }
            entries = self.handles.changed.wait(entries).unwrap();
        }
    }

    /// Move a pending/running invocation to `terminated`; no-op on states
    /// that are already absorbing.
    pub fn terminate(&self, handle: &InvocationHandle) -> Result<(), SandboxError> {
        if !self
            .handles
            .entries
            .lock()
            .unwrap()
            .contains_key(&handle.handle_id)
        {
            return Err(SandboxError::UnknownHandle(handle.handle_id.clone()));
        }
        self.handles
            .transition(&handle.handle_id, HandleState::Terminated, self.now_ms());
        Ok(())
    }

    /// Commit environment state as a restorable snapshot. Rejected while an
    /// invocation is in flight.
    pub fn commit_snapshot(&self, sandbox: &SandboxId) -> Result<SnapshotKey, SandboxError> {
        let (driver_token, spec, history) = {
            let sandboxes = self.sandboxes.lock().unwrap();
            let entry = sandboxes
                .get(&sandbox.0)
                .ok_or_else(|| SandboxError::SandboxDead(sandbox.0.clone()))?;
            if !entry.alive {
                return Err(SandboxError::SandboxDead(sandbox.0.clone()));
            }
            if entry.running.load(Ordering::SeqCst) > 0 {
                return Err(SandboxError::Busy(sandbox.0.clone()));
            }
            (
                entry.driver_token.clone(),
                entry.spec.clone(),
                entry.history.clone(),
            )
        };
        let key = Self::digest(&spec.env_id, &history);
        let mut snapshots = self.snapshots.lock().unwrap();
        if !snapshots.contains_key(&key.0) {
            let snapshot_token = self.driver.snapshot(&driver_token)?;
            snapshots.insert(
                key.0.clone(),
                SnapshotEntry {
                    spec,
                    driver_token: snapshot_token,
                    history,
                },
            );
        }
        Ok(key)
    }
}

fn materialize_result(entry: &HandleEntry) -> ExecResult {
    match (&entry.result, &entry.error) {
        (Some(result), _) => result.clone(),
        (None, Some(message)) => ExecResult {
            exit_status: -1,
            stdout: String::new(),
            stderr: message.clone(),
        },
        (None, None) => ExecResult {
            exit_status: -1,
            stdout: String::new(),
            stderr: "invocation produced no result".to_string(),
        },
    }
}
