//! Out-of-process execution of generated programs against test code.
//!
//! Each run gets a fresh temporary workspace, a cleared environment and its
//! own process group. The wall-clock limit is enforced from the outside by
//! killing the whole group. Outcome classification follows Python's
//! conventions: a clean exit passes, an uncaught `AssertionError` fails, any
//! other non-zero exit is an error.
//!
//! Network access is not blocked and there are no memory or CPU caps; this is
//! a trust boundary suited to benchmark-class code, not a jail.

use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCRIPT_NAME: &str = "candidate.py";

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("sandbox unavailable: {0}")]
    Unavailable(String),
    #[error("sandbox workspace error: {0}")]
    Workspace(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecLimits {
    pub wall_timeout: Duration,
    /// Per stream.
    pub max_output_bytes: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self {
            wall_timeout: Duration::from_secs(10),
            max_output_bytes: 64 * 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Pass,
    Fail,
    Error,
    Timeout,
}

impl TestStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TestStatus::Pass => "pass",
            TestStatus::Fail => "fail",
            TestStatus::Error => "error",
            TestStatus::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub status: TestStatus,
    /// Wall time in seconds.
    pub duration: f64,
    pub stdout_excerpt: String,
    pub stderr_excerpt: String,
    pub failing_assertion: Option<String>,
}

impl TestReport {
    /// A report that was not produced by running anything.
    pub fn synthetic(status: TestStatus) -> Self {
        Self {
            status,
            duration: 0.0,
            stdout_excerpt: String::new(),
            stderr_excerpt: String::new(),
            failing_assertion: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == TestStatus::Pass
    }

    /// A short, deterministic description of what went wrong, for feedback.
    pub fn diagnostic(&self, limits: &ExecLimits) -> String {
        match self.status {
            TestStatus::Pass => "all tests passed".to_string(),
            TestStatus::Timeout => format!(
                "execution timed out after {} s (possible infinite loop or excessive work)",
                limits.wall_timeout.as_secs_f64()
            ),
            TestStatus::Fail => {
                let mut s = String::from("a test assertion failed");
                if let Some(a) = &self.failing_assertion {
                    s.push_str(": ");
                    s.push_str(a);
                }
                s
            }
            TestStatus::Error => {
                let tail = tail_lines(&self.stderr_excerpt, 8);
                if tail.is_empty() {
                    "execution failed with no error output".to_string()
                } else {
                    format!("execution raised an error:\n{tail}")
                }
            }
        }
    }
}

fn tail_lines(text: &str, n: usize) -> String {
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(n)..].join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxConfig {
    /// Interpreter command, split on whitespace (e.g. `python3 -I`).
    pub interpreter_cmd: String,
    /// Parent directory for workspaces; the system temp dir when unset.
    pub workspace_root: Option<PathBuf>,
    pub keep_artifacts: bool,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter_cmd: "python3".to_string(),
            workspace_root: None,
            keep_artifacts: false,
        }
    }
}

/// Builds the executed script: program, then tests, then `check(entry_point)`
/// when an entry point is given (the HumanEval harness shape).
pub fn compose_script(program: &str, tests: &str, entry_point: Option<&str>) -> String {
    let mut script = String::with_capacity(program.len() + tests.len() + 64);
    script.push_str(program.trim_end());
    script.push_str("\n\n\n");
    if !tests.trim().is_empty() {
        script.push_str(tests.trim_end());
        script.push_str("\n\n\n");
    }
    if let Some(ep) = entry_point {
        script.push_str(&format!("check({ep})\n"));
    }
    script
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    config: SandboxConfig,
    program: PathBuf,
    args: Vec<String>,
}

impl Sandbox {
    /// Resolves the interpreter up front so a missing one is reported as
    /// [`SandboxError::Unavailable`] rather than as a candidate failure.
    pub fn new(config: SandboxConfig) -> Result<Self, SandboxError> {
        let mut parts = config.interpreter_cmd.split_whitespace();
        let exe = parts
            .next()
            .ok_or_else(|| SandboxError::Unavailable("empty interpreter command".into()))?;
        let program = resolve_executable(exe)
            .ok_or_else(|| SandboxError::Unavailable(format!("interpreter {exe:?} not found on PATH")))?;
        let args = parts.map(str::to_string).collect();
        Ok(Self { config, program, args })
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    pub fn execute_candidate(
        &self,
        program: &str,
        tests: &str,
        entry_point: Option<&str>,
        limits: &ExecLimits,
    ) -> Result<TestReport, SandboxError> {
        let mut builder = tempfile::Builder::new();
        builder.prefix("treegen-");
        let workspace = match &self.config.workspace_root {
            Some(root) => {
                std::fs::create_dir_all(root)?;
                builder.tempdir_in(root)?
            }
            None => builder.tempdir()?,
        };
        let script = compose_script(program, tests, entry_point);
        std::fs::write(workspace.path().join(SCRIPT_NAME), script)?;

        let result = self.run(workspace.path(), limits);
        if self.config.keep_artifacts {
            let kept = workspace.keep();
            tracing::debug!(path = %kept.display(), "kept sandbox workspace");
        }
        result
    }

    fn run(&self, dir: &Path, limits: &ExecLimits) -> Result<TestReport, SandboxError> {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .arg(SCRIPT_NAME)
            .current_dir(dir)
            .env_clear()
            .env("PATH", "/usr/local/bin:/usr/bin:/bin")
            .env("HOME", dir)
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONUTF8", "1")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }

        let start = Instant::now();
        let mut child = cmd.spawn().map_err(|e| match e.kind() {
            io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied => {
                SandboxError::Unavailable(format!("cannot start {}: {e}", self.program.display()))
            }
            _ => SandboxError::Workspace(e),
        })?;

        let cap = limits.max_output_bytes;
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");
        let out_reader = thread::spawn(move || capture(stdout, cap, Keep::Head));
        let err_reader = thread::spawn(move || capture(stderr, cap, Keep::Tail));

        let deadline = start + limits.wall_timeout;
        let mut timed_out = false;
        let status: Option<ExitStatus> = loop {
            match child.try_wait()? {
                Some(status) => break Some(status),
                None if Instant::now() >= deadline => {
                    timed_out = true;
                    break None;
                }
                None => thread::sleep(Duration::from_millis(5)),
            }
        };
        // Reap stragglers in the group either way so the pipes close.
        kill_group(&mut child);
        let status = match status {
            Some(s) => s,
            None => child.wait()?,
        };
        let duration = start.elapsed().as_secs_f64();

        let stdout_excerpt = scrub_workspace(out_reader.join().unwrap_or_default(), dir);
        let stderr_excerpt = scrub_workspace(err_reader.join().unwrap_or_default(), dir);

        let (status, failing_assertion) = if timed_out {
            (TestStatus::Timeout, None)
        } else {
            classify(status.success(), &stderr_excerpt)
        };
        Ok(TestReport {
            status,
            duration,
            stdout_excerpt,
            stderr_excerpt,
            failing_assertion,
        })
    }
}

/// Maps a finished process to a status. Every outcome lands on exactly one.
pub fn classify(success: bool, stderr: &str) -> (TestStatus, Option<String>) {
    if success {
        return (TestStatus::Pass, None);
    }
    let lines: Vec<&str> = stderr.lines().filter(|l| !l.trim().is_empty()).collect();
    let Some(last) = lines.last() else {
        return (TestStatus::Error, None);
    };
    if !last.starts_with("AssertionError") {
        return (TestStatus::Error, None);
    }
    let assert_line = lines
        .iter()
        .rev()
        .skip(1)
        .map(|l| l.trim())
        .take_while(|l| !l.starts_with("File ") && !l.starts_with("Traceback"))
        .find(|l| l.starts_with("assert"))
        .map(str::to_string);
    let message = last
        .strip_prefix("AssertionError")
        .map(|m| m.trim_start_matches(':').trim())
        .filter(|m| !m.is_empty());
    let text = match (assert_line, message) {
        (Some(a), Some(m)) => format!("{a} (AssertionError: {m})"),
        (Some(a), None) => a,
        (None, Some(m)) => format!("AssertionError: {m}"),
        (None, None) => "AssertionError".to_string(),
    };
    (TestStatus::Fail, Some(text))
}

#[derive(Clone, Copy)]
enum Keep {
    Head,
    Tail,
}

/// Drains `reader` fully, keeping at most `cap` bytes from the head or tail.
fn capture(mut reader: impl Read, cap: usize, keep: Keep) -> String {
    let mut kept: Vec<u8> = Vec::new();
    let mut buf = [0u8; 8192];
    loop {
        match reader.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                kept.extend_from_slice(&buf[..n]);
                if kept.len() > cap {
                    match keep {
                        Keep::Head => kept.truncate(cap),
                        Keep::Tail => {
                            let excess = kept.len() - cap;
                            kept.drain(..excess);
                        }
                    }
                }
            }
        }
    }
    let text = String::from_utf8_lossy(&kept).into_owned();
    clip(text, cap, keep)
}

/// Lossy decoding can grow the byte count; clip again on a char boundary.
fn clip(mut text: String, cap: usize, keep: Keep) -> String {
    if text.len() <= cap {
        return text;
    }
    match keep {
        Keep::Head => {
            let mut end = cap;
            while !text.is_char_boundary(end) {
                end -= 1;
            }
            text.truncate(end);
            text
        }
        Keep::Tail => {
            let mut start = text.len() - cap;
            while !text.is_char_boundary(start) {
                start += 1;
            }
            text.split_off(start)
        }
    }
}

/// Replaces the random workspace path with a relative one so that reports
/// do not depend on where the run happened.
fn scrub_workspace(text: String, dir: &Path) -> String {
    let mut text = text;
    let canonical = dir.canonicalize().ok();
    for d in [Some(dir.to_path_buf()), canonical].into_iter().flatten() {
        let prefix = format!("{}/", d.display());
        if text.contains(&prefix) {
            text = text.replace(&prefix, "");
        }
    }
    text
}

fn kill_group(child: &mut std::process::Child) {
    #[cfg(unix)]
    {
        let pid = child.id() as libc::pid_t;
        // SAFETY: signalling a process group we created; ESRCH is harmless.
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
    }
    #[cfg(not(unix))]
    {
        let _ = child.kill();
    }
}

fn resolve_executable(name: &str) -> Option<PathBuf> {
    let candidate = Path::new(name);
    if candidate.components().count() > 1 {
        return candidate.is_file().then(|| candidate.to_path_buf());
    }
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|dir| dir.join(name))
        .find(|p| is_executable(p))
}

fn is_executable(p: &Path) -> bool {
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        p.metadata()
            .map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
            .unwrap_or(false)
    }
    #[cfg(not(unix))]
    {
        p.is_file()
    }
}
