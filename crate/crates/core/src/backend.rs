//! Subprocess bridge to externally hosted models.
//!
//! The configured command is started on first use and kept alive. Each call
//! writes one JSON request line to its stdin and reads one JSON object line
//! from its stdout; stdout lines that are not JSON objects are skipped. Bulk
//! tensors travel through files named in the request. A response carrying an
//! `"error"` key, or the process exiting without answering, is a failure.
//! A process that exits after answering is restarted on the next call.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex, PoisonError};
use std::thread::JoinHandle;

use serde_json::Value;

use crate::error::{Error, Result};

const STDERR_TAIL: usize = 8;

#[derive(Debug)]
struct Session {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    stderr: Arc<Mutex<VecDeque<String>>>,
    stderr_reader: Option<JoinHandle<()>>,
}

impl Session {
    /// `Ok(None)` when the process closed stdout before answering.
    fn exchange(&mut self, line: &[u8]) -> std::io::Result<Option<String>> {
        self.stdin.write_all(line)?;
        self.stdin.flush()?;
        let mut buf = String::new();
        loop {
            buf.clear();
            if self.stdout.read_line(&mut buf)? == 0 {
                return Ok(None);
            }
            let trimmed = buf.trim();
            if trimmed.starts_with('{') {
                return Ok(Some(trimmed.to_string()));
            }
            if !trimmed.is_empty() {
                log::debug!("backend stdout: {trimmed}");
            }
        }
    }

    fn has_exited(&mut self) -> bool {
        !matches!(self.child.try_wait(), Ok(None))
    }

    /// Reaps the process and describes how it ended.
    fn finish(mut self, describe: &str) -> BackendFailure {
        let status = self.child.wait();
        if let Some(h) = self.stderr_reader.take() {
            let _ = h.join();
        }
        let tail = self
            .stderr
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join(" | ");
        match status {
            Ok(s) if s.success() => BackendFailure(format!("`{describe}` produced no response: {tail}")),
            Ok(s) => BackendFailure(format!("`{describe}` exited with {s}: {tail}")),
            Err(e) => BackendFailure(format!("`{describe}` could not be waited on: {e}")),
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if !self.has_exited() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// A command line plus its running process, if any. Calls are serialized.
#[derive(Debug)]
pub struct ExternalBackend {
    program: String,
    args: Vec<String>,
    session: Mutex<Option<Session>>,
}

impl Clone for ExternalBackend {
    /// The clone starts its own process.
    fn clone(&self) -> Self {
        Self::new(self.program.clone(), self.args.clone())
    }
}

impl PartialEq for ExternalBackend {
    fn eq(&self, other: &Self) -> bool {
        self.program == other.program && self.args == other.args
    }
}

/// Failure reported by the child process itself, as opposed to a spawn failure.
#[derive(Debug, Clone)]
pub struct BackendFailure(pub String);

impl ExternalBackend {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            session: Mutex::new(None),
        }
    }

    /// Parses a whitespace-separated command line (no quoting rules).
    pub fn from_command_line(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty backend command".into()))?;
        Ok(Self::new(program, parts.collect()))
    }

    pub fn program(&self) -> &str {
        &self.program
    }

    pub fn describe(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn spawn(&self) -> Result<Session> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Load {
                artifact: format!("backend command `{}`", self.describe()),
                reason: e.to_string(),
            })?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        let stderr_pipe = child.stderr.take().expect("stderr is piped");
        let stderr = Arc::new(Mutex::new(VecDeque::new()));
        let sink = Arc::clone(&stderr);
        let stderr_reader = std::thread::spawn(move || {
            for line in BufReader::new(stderr_pipe).lines().map_while(std::result::Result::ok) {
                log::debug!("backend stderr: {line}");
                let mut tail = sink.lock().unwrap_or_else(PoisonError::into_inner);
                if tail.len() == STDERR_TAIL {
                    tail.pop_front();
                }
                tail.push_back(line);
            }
        });
        Ok(Session {
            child,
            stdin,
            stdout,
            stderr,
            stderr_reader: Some(stderr_reader),
        })
    }

    /// Runs one request. `Err` means the backend could not be started;
    /// `Ok(Err(_))` means it ran and reported a failure.
    pub fn call(&self, request: &Value) -> Result<std::result::Result<Value, BackendFailure>> {
        let mut line = serde_json::to_vec(request).expect("request serializes");
        line.push(b'\n');
        let mut guard = self.session.lock().unwrap_or_else(PoisonError::into_inner);
        if guard.as_mut().is_some_and(Session::has_exited) {
            *guard = None;
        }
        for attempt in 0..2 {
            let reused = guard.is_some();
            if !reused {
                *guard = Some(self.spawn()?);
            }
            let session = guard.as_mut().expect("session present");
            let reply = match session.exchange(&line) {
                Ok(Some(reply)) => reply,
                Ok(None) | Err(_) => {
                    let failure = guard.take().expect("session present").finish(&self.describe());
                    if reused && attempt == 0 {
                        // the previous process went away between calls
                        continue;
                    }
                    return Ok(Err(failure));
                }
            };
            let value: Value = match serde_json::from_str(&reply) {
                Ok(v) => v,
                Err(e) => {
                    return Ok(Err(BackendFailure(format!(
                        "unparseable response `{reply}`: {e}"
                    ))))
                }
            };
            if let Some(err) = value.get("error") {
                let msg = err.as_str().map_or_else(|| err.to_string(), str::to_string);
                return Ok(Err(BackendFailure(msg)));
            }
            return Ok(Ok(value));
        }
        unreachable!("second attempt always returns")
    }
}

/// Checks that a weights artifact exists before any inference is attempted.
pub fn require_weights(path: Option<&Path>, what: &str, hint: &str) -> Result<PathBuf> {
    let path = path.ok_or_else(|| Error::Load {
        artifact: format!("{what} weights"),
        reason: format!("no weights path configured; {hint}"),
    })?;
    if !path.exists() {
        return Err(Error::Load {
            artifact: format!("{what} weights at {}", path.display()),
            reason: format!("file or directory does not exist; {hint}"),
        });
    }
    Ok(path.to_path_buf())
}
