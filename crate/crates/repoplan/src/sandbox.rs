//! Isolated test execution: a subprocess profile that runs one Python file
//! with the workspace importable, a scratch working directory, and wall-time
//! and memory limits.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("failed to launch interpreter: {0}")]
    Launch(#[from] std::io::Error),
}

/// Resource limits for one execution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandboxLimits {
    pub wall_seconds: u64,
    pub memory_bytes: Option<u64>,
}

impl Default for SandboxLimits {
    fn default() -> Self {
        SandboxLimits { wall_seconds: 30, memory_bytes: None }
    }
}

/// Verbatim capture of one test process run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ExecutionResult {
    /// Process exit code; `None` when killed by a signal or the timeout.
    pub exit_status: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub wall_ms: u64,
    pub timed_out: bool,
    pub memory_exceeded: bool,
}

impl ExecutionResult {
    pub fn passed(&self) -> bool {
        self.exit_status == Some(0) && !self.timed_out && !self.memory_exceeded
    }

    /// Combined output, the text failure diagnosis runs on.
    pub fn output(&self) -> String {
        let mut out = self.stdout.clone();
        if !self.stderr.is_empty() {
            if !out.is_empty() && !out.ends_with('\n') {
                out.push('\n');
            }
            out.push_str(&self.stderr);
        }
        if self.timed_out {
            if !out.is_empty() && !out.ends_with('\n') {
                out.push('\n');
            }
            out.push_str("[sandbox] wall-time limit exceeded; process killed\n");
        }
        out
    }
}

/// Executes one Python file in isolation.
pub trait Sandbox: Send + Sync {
    /// Runs `script` (workspace-relative path) with the workspace root on
    /// PYTHONPATH and the working directory in scratch space.
    fn run_python(
        &self,
        workspace_root: &Path,
        script: &str,
        limits: &SandboxLimits,
    ) -> Result<ExecutionResult, SandboxError>;
}

/// Subprocess-based sandbox: plain `python3` with a scratch cwd, a polled
/// wall-time kill, and an optional address-space cap.
pub struct SubprocessSandbox {
    interpreter: PathBuf,
}

impl SubprocessSandbox {
    pub fn new() -> Self {
        SubprocessSandbox { interpreter: PathBuf::from("python3") }
    }

    pub fn with_interpreter(interpreter: impl Into<PathBuf>) -> Self {
        SubprocessSandbox { interpreter: interpreter.into() }
    }
}

impl Default for SubprocessSandbox {
    fn default() -> Self {
        Self::new()
    }
}

impl Sandbox for SubprocessSandbox {
    fn run_python(
        &self,
        workspace_root: &Path,
        script: &str,
        limits: &SandboxLimits,
    ) -> Result<ExecutionResult, SandboxError> {
        let scratch = tempfile::tempdir()?;
        let script_abs = workspace_root.join(script);
        let mut cmd = Command::new(&self.interpreter);
        cmd.arg(&script_abs)
            .current_dir(scratch.path())
            .env("PYTHONPATH", workspace_root)
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONHASHSEED", "0")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(bytes) = limits.memory_bytes {
            #[cfg(unix)]
            {
                use std::os::unix::process::CommandExt;
                unsafe {
                    cmd.pre_exec(move || {
                        let lim = libc::rlimit {
                            rlim_cur: bytes as libc::rlim_t,
                            rlim_max: bytes as libc::rlim_t,
                        };
                        libc::setrlimit(libc::RLIMIT_AS, &lim);
                        Ok(())
                    });
                }
            }
        }

        let start = Instant::now();
        let mut child = cmd.spawn()?;
        let deadline = Duration::from_secs(limits.wall_seconds);
        let mut timed_out = false;
        let status = loop {
            match child.try_wait()? {
                Some(status) => break Some(status),
                None => {
                    if start.elapsed() >= deadline {
                        timed_out = true;
                        let _ = child.kill();
                        let _ = child.wait();
                        break None;
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
            }
        };
        let wall_ms = start.elapsed().as_millis() as u64;

        let mut stdout = String::new();
        let mut stderr = String::new();
        if let Some(mut pipe) = child.stdout.take() {
            let _ = pipe.read_to_string(&mut stdout);
        }
        if let Some(mut pipe) = child.stderr.take() {
            let _ = pipe.read_to_string(&mut stderr);
        }

        let memory_exceeded =
            limits.memory_bytes.is_some() && stderr.contains("MemoryError");
        Ok(ExecutionResult {
            exit_status: status.and_then(|s| s.code()),
            stdout,
            stderr,
            wall_ms,
            timed_out,
            memory_exceeded,
        })
    }
}
