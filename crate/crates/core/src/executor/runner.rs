use std::collections::VecDeque;
use std::fmt;
use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{self, ProtocolError, Reply, Request, PROTOCOL_VERSION};
use super::{EmptyFieldError, EnvFingerprint, EvalOutcome, EvalPlan, Evaluation, Evaluator};
use crate::configspace::{KernelConfig, ShapeKey};

const STDERR_TAIL: usize = 20;

/// Program and arguments used to launch a runner. Parsed from a string by
/// splitting on whitespace; no shell quoting is interpreted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunnerCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl RunnerCommand {
    pub fn new(
        program: impl Into<String>,
        args: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        RunnerCommand {
            program: program.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }
}

impl FromStr for RunnerCommand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split_whitespace();
        let program = parts.next().ok_or("empty runner command")?;
        Ok(RunnerCommand::new(program, parts))
    }
}

impl fmt::Display for RunnerCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.program)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineEvent {
    Line(String),
    Eof,
    Error(String),
}

/// A spawned runner with line-oriented, timeout-aware access to its stdout.
pub struct RunnerProcess {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<LineEvent>,
    stderr: Arc<Mutex<VecDeque<String>>>,
}

impl RunnerProcess {
    pub fn spawn(command: &RunnerCommand) -> io::Result<Self> {
        let mut child = Command::new(&command.program)
            .args(&command.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take();
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| io::Error::other("runner stdout unavailable"))?;
        let stderr_pipe = child
            .stderr
            .take()
            .ok_or_else(|| io::Error::other("runner stderr unavailable"))?;

        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            let mut buf = Vec::new();
            loop {
                buf.clear();
                match reader.read_until(b'\n', &mut buf) {
                    Ok(0) => {
                        let _ = tx.send(LineEvent::Eof);
                        break;
                    }
                    Ok(_) => {
                        let line = String::from_utf8_lossy(&buf).trim_end().to_string();
                        if tx.send(LineEvent::Line(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(LineEvent::Error(e.to_string()));
                        break;
                    }
                }
            }
        });

        let stderr = Arc::new(Mutex::new(VecDeque::new()));
        let tail = Arc::clone(&stderr);
        thread::spawn(move || {
            for line in BufReader::new(stderr_pipe).lines() {
                let Ok(line) = line else { break };
                log::debug!(target: "ktune::runner", "stderr: {line}");
                let mut tail = tail.lock().unwrap_or_else(|e| e.into_inner());
                if tail.len() == STDERR_TAIL {
                    tail.pop_front();
                }
                tail.push_back(line);
            }
        });

        Ok(RunnerProcess {
            child,
            stdin,
            lines,
            stderr,
        })
    }

    pub fn send_line(&mut self, line: &str) -> io::Result<()> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| io::Error::new(io::ErrorKind::BrokenPipe, "runner stdin closed"))?;
        stdin.write_all(line.as_bytes())?;
        stdin.write_all(b"\n")?;
        stdin.flush()
    }

    pub fn send(&mut self, request: &Request) -> io::Result<()> {
        self.send_line(&request.to_line())
    }

    /// Next nonblank stdout line, or `None` once `timeout` elapses.
    pub fn recv(&self, timeout: Duration) -> Option<LineEvent> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(left) {
                Ok(LineEvent::Line(l)) if l.trim().is_empty() => continue,
                Ok(ev) => return Some(ev),
                Err(RecvTimeoutError::Timeout) => return None,
                Err(RecvTimeoutError::Disconnected) => return Some(LineEvent::Eof),
            }
        }
    }

    pub fn close_stdin(&mut self) {
        self.stdin.take();
    }

    /// Polls for exit until `timeout`; `None` if still running.
    pub fn wait_exit(&mut self, timeout: Duration) -> io::Result<Option<ExitStatus>> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(status) = self.child.try_wait()? {
                return Ok(Some(status));
            }
            if Instant::now() >= deadline {
                return Ok(None);
            }
            thread::sleep(Duration::from_millis(5));
        }
    }

    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    pub fn stderr_tail(&self) -> Vec<String> {
        self.stderr
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .cloned()
            .collect()
    }

    fn stderr_suffix(&self) -> String {
        let tail = self.stderr_tail();
        match tail.last() {
            Some(last) => format!(" (stderr: {last})"),
            None => String::new(),
        }
    }
}

impl Drop for RunnerProcess {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            self.kill();
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("cannot start runner `{command}`: {error}")]
    Spawn { command: String, error: io::Error },
    #[error("runner i/o failed: {0}")]
    Io(io::Error),
    #[error("runner protocol error during handshake: {0}")]
    Protocol(ProtocolError),
    #[error("runner did not answer hello within {0} ms")]
    HandshakeTimeout(u64),
    #[error("runner exited during handshake{0}")]
    Exited(String),
    #[error("runner fingerprint incomplete: {0}")]
    Fingerprint(EmptyFieldError),
}

impl From<io::Error> for RunnerError {
    fn from(e: io::Error) -> Self {
        RunnerError::Io(e)
    }
}

impl From<ProtocolError> for RunnerError {
    fn from(e: ProtocolError) -> Self {
        RunnerError::Protocol(e)
    }
}

impl From<EmptyFieldError> for RunnerError {
    fn from(e: EmptyFieldError) -> Self {
        RunnerError::Fingerprint(e)
    }
}

/// An executor session owning one runner process.
///
/// After a timeout, crash, or protocol breach the process is killed and a
/// fresh one is started (and re-handshaken) on the next evaluation; a runner
/// that comes back with a different identity fails every later evaluation.
pub struct RunnerSession {
    command: RunnerCommand,
    process: Option<RunnerProcess>,
    fingerprint: EnvFingerprint,
    capabilities: Vec<String>,
    handshake_timeout: Duration,
    evaluations: u64,
    restarts: u64,
}

impl RunnerSession {
    pub fn start(
        command: RunnerCommand,
        space_digest: &str,
        handshake_timeout: Duration,
    ) -> Result<Self, RunnerError> {
        let (process, hello) = Self::launch(&command, handshake_timeout)?;
        if !hello.capabilities.iter().any(|c| c == "evaluate") {
            log::warn!("runner `{command}` does not advertise the `evaluate` capability");
        }
        let fingerprint = EnvFingerprint::new(hello.identity, space_digest, PROTOCOL_VERSION)?;
        Ok(RunnerSession {
            command,
            process: Some(process),
            fingerprint,
            capabilities: hello.capabilities,
            handshake_timeout,
            evaluations: 0,
            restarts: 0,
        })
    }

    fn launch(
        command: &RunnerCommand,
        timeout: Duration,
    ) -> Result<(RunnerProcess, protocol::HelloReply), RunnerError> {
        let mut process = RunnerProcess::spawn(command).map_err(|error| RunnerError::Spawn {
            command: command.to_string(),
            error,
        })?;
        process.send(&Request::Hello {
            protocol: PROTOCOL_VERSION,
        })?;
        match process.recv(timeout) {
            None => Err(RunnerError::HandshakeTimeout(timeout.as_millis() as u64)),
            Some(LineEvent::Eof) | Some(LineEvent::Error(_)) => {
                // Give the stderr reader a moment to collect the last words.
                thread::sleep(Duration::from_millis(20));
                Err(RunnerError::Exited(process.stderr_suffix()))
            }
            Some(LineEvent::Line(line)) => match protocol::parse_reply(&line)? {
                Reply::Hello(hello) => Ok((process, hello)),
                Reply::Result(_) => Err(ProtocolError::UnexpectedType {
                    expected: "hello",
                    found: "result".into(),
                }
                .into()),
            },
        }
    }

    pub fn capabilities(&self) -> &[String] {
        &self.capabilities
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// Number of times the runner process was replaced after a fault.
    pub fn restarts(&self) -> u64 {
        self.restarts
    }

    /// Sends `shutdown` and waits for the runner to exit.
    pub fn shutdown(mut self) -> Result<Option<ExitStatus>, RunnerError> {
        let Some(mut process) = self.process.take() else {
            return Ok(None);
        };
        let _ = process.send(&Request::Shutdown);
        process.close_stdin();
        let status = process.wait_exit(self.handshake_timeout)?;
        if status.is_none() {
            process.kill();
        }
        Ok(status)
    }

    fn poison(&mut self) -> String {
        match self.process.take() {
            Some(mut p) => {
                p.kill();
                p.stderr_suffix()
            }
            None => String::new(),
        }
    }

    fn ensure_process(&mut self) -> Result<(), String> {
        if self.process.is_some() {
            return Ok(());
        }
        let (process, hello) = Self::launch(&self.command, self.handshake_timeout)
            .map_err(|e| format!("runner restart failed: {e}"))?;
        self.restarts += 1;
        if hello.identity != self.fingerprint.identity() {
            return Err("runner identity changed after restart".into());
        }
        self.process = Some(process);
        Ok(())
    }
}

impl Evaluator for RunnerSession {
    fn fingerprint(&self) -> &EnvFingerprint {
        &self.fingerprint
    }

    fn evaluate(&mut self, config: &KernelConfig, shape: &ShapeKey, plan: &EvalPlan) -> Evaluation {
        self.evaluations += 1;
        let start = Instant::now();
        let done = |outcome: EvalOutcome| Evaluation {
            outcome,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        if let Err(reason) = self.ensure_process() {
            return done(EvalOutcome::failure(reason, false));
        }
        let request = Request::Evaluate {
            config: config.clone(),
            shape: shape.clone(),
            warmups: plan.warmups,
            reps: plan.reps,
        };
        let process = self.process.as_mut().expect("ensured above");
        if let Err(e) = process.send(&request) {
            let tail = self.poison();
            return done(EvalOutcome::failure(
                format!("runner died: {e}{tail}"),
                false,
            ));
        }
        let event = process.recv(Duration::from_millis(plan.timeout_ms));
        match event {
            None => {
                self.poison();
                done(EvalOutcome::failure(
                    format!("timed out after {} ms", plan.timeout_ms),
                    true,
                ))
            }
            Some(LineEvent::Eof) | Some(LineEvent::Error(_)) => {
                thread::sleep(Duration::from_millis(20));
                let tail = self.poison();
                done(EvalOutcome::failure(
                    format!("runner exited mid-request{tail}"),
                    false,
                ))
            }
            Some(LineEvent::Line(line)) => match protocol::parse_reply(&line) {
                Ok(Reply::Result(reply)) => done(reply.into_outcome(plan.warmups, plan.reps)),
                Ok(Reply::Hello(_)) => {
                    self.poison();
                    done(EvalOutcome::failure(
                        "protocol breach: hello received in reply to evaluate",
                        false,
                    ))
                }
                Err(e) => {
                    self.poison();
                    done(EvalOutcome::failure(
                        format!("malformed runner reply: {e}"),
                        false,
                    ))
                }
            },
        }
    }
}

impl Drop for RunnerSession {
    fn drop(&mut self) {
        if let Some(mut p) = self.process.take() {
            let _ = p.send(&Request::Shutdown);
            p.close_stdin();
            if !matches!(p.wait_exit(Duration::from_millis(200)), Ok(Some(_))) {
                p.kill();
            }
        }
    }
}
