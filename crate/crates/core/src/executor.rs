//! Running candidate programs under a language profile.
//!
//! Every call gets its own temporary working directory. Programs run in
//! their own process group so a timeout kills the whole tree. This is
//! isolation for a benchmark harness, not a security sandbox.

use std::fmt;
use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAX_CAPTURE: usize = 1 << 20;
const WORKDIR_PLACEHOLDER: &str = "<workdir>";

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("toolchain unavailable: cannot run {program:?}: {message}")]
    Environment { program: String, message: String },
    #[error("invalid language profile {name}: {message}")]
    Profile { name: String, message: String },
    #[error("cannot prepare working directory: {0}")]
    Io(#[from] std::io::Error),
    #[error("no execution feedback to aggregate")]
    EmptyFeedback,
}

/// One program input, fed on standard input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TestInput(String);

impl TestInput {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for TestInput {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

fn default_timeout() -> f64 {
    10.0
}

fn default_line_pattern() -> String {
    r"line (\d+)".to_string()
}

/// How to compile and run programs of one language.
///
/// Command templates may use `{file}` (absolute path of the program file)
/// and `{dir}` (the working directory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub name: String,
    pub file_extension: String,
    #[serde(default)]
    pub compile_cmd: Option<Vec<String>>,
    pub run_cmd: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_line_pattern")]
    pub error_line_pattern: String,
}

impl LanguageProfile {
    pub fn validate(&self) -> Result<(), ExecError> {
        let bad = |message: &str| ExecError::Profile {
            name: self.name.clone(),
            message: message.to_string(),
        };
        if self.run_cmd.is_empty() {
            return Err(bad("run_cmd is empty"));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(bad("timeout_s must be positive"));
        }
        let mentions_program = self
            .compile_cmd
            .iter()
            .flatten()
            .chain(&self.run_cmd)
            .any(|a| a.contains("{file}") || a.contains("{dir}"));
        if !mentions_program {
            return Err(bad("no command references {file} or {dir}"));
        }
        let re = Regex::new(&self.error_line_pattern).map_err(|e| bad(&e.to_string()))?;
        if re.captures_len() < 2 {
            return Err(bad("error_line_pattern needs a capture group"));
        }
        Ok(())
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecStatus {
    Success,
    CompileError,
    RuntimeError,
    Timeout,
}

impl fmt::Display for ExecStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Outcome of one program run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionFeedback {
    pub status: ExecStatus,
    pub stderr: String,
    pub stdout: String,
    pub error_line: Option<usize>,
    pub exit_code: Option<i32>,
    /// Wall-clock time. Not serialized, so traces stay reproducible.
    #[serde(skip_serializing, default)]
    pub duration_s: f64,
}

impl ExecutionFeedback {
    pub fn is_success(&self) -> bool {
        self.status == ExecStatus::Success
    }
}

struct RawRun {
    exit_code: Option<i32>,
    timed_out: bool,
    stdout: String,
    stderr: String,
    duration: Duration,
}

/// Writes `program` into a fresh temporary directory, compiles it once if
/// the profile has a compile step, then runs it once per input (once with
/// empty stdin when `inputs` is empty).
///
/// A failed compile yields a single `CompileError` feedback. Occurrences of
/// the working directory path in program output are replaced with
/// `<workdir>`.
pub fn execute(
    program: &str,
    inputs: &[TestInput],
    profile: &LanguageProfile,
) -> Result<Vec<ExecutionFeedback>, ExecError> {
    profile.validate()?;
    let line_re = Regex::new(&profile.error_line_pattern).expect("validated pattern");
    let workdir = tempfile::Builder::new().prefix("evocode-").tempdir()?;
    let dir = workdir.path();
    let file = dir.join(format!("main.{}", profile.file_extension.trim_start_matches('.')));
    std::fs::write(&file, program)?;
    let scrub = Scrubber::new(dir);

    let feedback = |raw: RawRun, failure: ExecStatus| {
        let stderr = scrub.apply(&raw.stderr);
        let stdout = scrub.apply(&raw.stdout);
        let status = if raw.timed_out {
            ExecStatus::Timeout
        } else if raw.exit_code == Some(0) {
            ExecStatus::Success
        } else {
            failure
        };
        let error_line = if status == ExecStatus::Success {
            None
        } else {
            extract_error_line(&line_re, &stderr)
        };
        ExecutionFeedback {
            status,
            stderr,
            stdout,
            error_line,
            exit_code: raw.exit_code,
            duration_s: raw.duration.as_secs_f64(),
        }
    };

    if let Some(compile) = &profile.compile_cmd {
        let argv = expand(compile, &file, dir);
        let raw = run_process(&argv, dir, "", profile.timeout())?;
        if raw.timed_out || raw.exit_code != Some(0) {
            return Ok(vec![feedback(raw, ExecStatus::CompileError)]);
        }
    }

    let argv = expand(&profile.run_cmd, &file, dir);
    let empty = [TestInput::new("")];
    let inputs = if inputs.is_empty() { &empty[..] } else { inputs };
    inputs
        .iter()
        .map(|input| {
            let raw = run_process(&argv, dir, input.as_str(), profile.timeout())?;
            Ok(feedback(raw, ExecStatus::RuntimeError))
        })
        .collect()
}

/// First line number captured by `pattern` in `stderr`.
pub fn extract_error_line(pattern: &Regex, stderr: &str) -> Option<usize> {
    pattern
        .captures(stderr)
        .and_then(|c| c.get(1))
        .and_then(|m| m.as_str().parse().ok())
}

fn expand(template: &[String], file: &Path, dir: &Path) -> Vec<String> {
    let file = file.display().to_string();
    let dir = dir.display().to_string();
    template
        .iter()
        .map(|a| a.replace("{file}", &file).replace("{dir}", &dir))
        .collect()
}

struct Scrubber {
    paths: Vec<String>,
}

impl Scrubber {
    fn new(dir: &Path) -> Self {
        let mut paths = vec![dir.display().to_string()];
        if let Ok(canon) = dir.canonicalize() {
            let canon = canon.display().to_string();
            if canon != paths[0] {
                paths.push(canon);
            }
        }
        // Longest first so a canonical path containing the other is replaced whole.
        paths.sort_by_key(|p| std::cmp::Reverse(p.len()));
        Self { paths }
    }

    fn apply(&self, text: &str) -> String {
        self.paths
            .iter()
            .fold(text.to_string(), |acc, p| acc.replace(p.as_str(), WORKDIR_PLACEHOLDER))
    }
}

fn run_process(argv: &[String], cwd: &Path, stdin: &str, timeout: Duration) -> Result<RawRun, ExecError> {
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .current_dir(cwd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|e| ExecError::Environment {
            program: argv[0].clone(),
            message: e.to_string(),
        })?;
    let start = Instant::now();
    let pgid = child.id() as libc::pid_t;

    let mut stdin_pipe = child.stdin.take().expect("piped stdin");
    let input = stdin.as_bytes().to_vec();
    let writer = thread::spawn(move || {
        // The program may exit without reading its input.
        let _ = stdin_pipe.write_all(&input);
    });
    let out_reader = spawn_reader(child.stdout.take().expect("piped stdout"));
    let err_reader = spawn_reader(child.stderr.take().expect("piped stderr"));

    let (exit_code, timed_out) = wait_with_timeout(&mut child, pgid, timeout)?;
    let duration = start.elapsed();
    // Reap stray descendants that may still hold the pipes open.
    kill_group(pgid);

    let _ = writer.join();
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    Ok(RawRun {
        exit_code,
        timed_out,
        stdout,
        stderr,
        duration: if timed_out { duration.max(timeout) } else { duration },
    })
}

fn wait_with_timeout(child: &mut Child, pgid: libc::pid_t, timeout: Duration) -> Result<(Option<i32>, bool), ExecError> {
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok((status.code(), false));
        }
        if Instant::now() >= deadline {
            kill_group(pgid);
            child.wait()?;
            return Ok((None, true));
        }
        thread::sleep(Duration::from_millis(5));
    }
}

fn kill_group(pgid: libc::pid_t) {
    // SAFETY: killpg only sends a signal; a stale group id yields ESRCH.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
}

fn spawn_reader<R: Read + Send + 'static>(mut pipe: R) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = MAX_CAPTURE.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        String::from_utf8_lossy(&kept).into_owned()
    })
}

/// Success iff every run succeeded; otherwise the first failing run.
pub fn aggregate(feedbacks: &[ExecutionFeedback]) -> Result<ExecutionFeedback, ExecError> {
    let first = feedbacks.first().ok_or(ExecError::EmptyFeedback)?;
    Ok(feedbacks
        .iter()
        .find(|f| !f.is_success())
        .unwrap_or(first)
        .clone())
}

fn path_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(^|[\s'"(\[=:,])/[^\s'":,)\]]+"#).expect("valid regex"))
}

fn hex_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"0[xX][0-9a-fA-F]+").expect("valid regex"))
}

/// Canonical form used to decide whether two iterations failed the same way:
/// status name plus stderr with absolute paths and hex addresses masked and
/// trailing whitespace removed. Every success normalizes to `"Success"`.
pub fn normalize_feedback(f: &ExecutionFeedback) -> String {
    if f.is_success() {
        return "Success".to_string();
    }
    let masked = path_regex().replace_all(&f.stderr, "${1}<path>");
    let masked = hex_regex().replace_all(&masked, "0x<addr>");
    let body = masked
        .lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n");
    let body = body.trim_end();
    if body.is_empty() {
        f.status.to_string()
    } else {
        format!("{}\n{}", f.status, body)
    }
}

/// The error text handed to prompts and stored with feedback pairs: the
/// error message followed by the offending source line when it is known.
pub fn feedback_message(f: &ExecutionFeedback, program: &str) -> String {
    let stderr = f.stderr.trim_end();
    let mut msg = if !stderr.is_empty() {
        stderr.to_string()
    } else {
        match (f.status, f.exit_code) {
            (ExecStatus::Success, _) => "Success".to_string(),
            (ExecStatus::Timeout, _) => "Execution timed out".to_string(),
            (status, Some(code)) => format!("{status}: process exited with status {code}"),
            (status, None) => format!("{status}: process terminated by a signal"),
        }
    };
    if let Some(n) = f.error_line {
        if let Some(line) = n.checked_sub(1).and_then(|i| program.lines().nth(i)) {
            msg.push_str(&format!("\nLine {n}: {}", line.trim()));
        }
    }
    msg
}

/// Output comparison used for scoring: trailing whitespace on each line and
/// trailing blank lines are ignored.
pub fn outputs_match(actual: &str, expected: &str) -> bool {
    normalize_output(actual) == normalize_output(expected)
}

fn normalize_output(s: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = s.lines().map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}
