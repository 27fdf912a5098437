//! Newline-delimited JSON protocol for out-of-process backends.
//!
//! ```text
//! -> {"id":1,"method":"hello","params":{"protocol_version":1}}
//! <- {"id":1,"status":"ok","payload":{"capabilities":["judge"],"protocol_version":1}}
//! -> {"id":2,"method":"judge","params":{...},"frame":{"video_id":"v","frame_index":4}}
//! <- {"id":2,"status":"error","error_kind":"BackendUnavailable","error_msg":"..."}
//! ```
//!
//! One request is in flight per connection. Boxes are `[x0,y0,x1,y1]`
//! arrays and masks travel as RLE strings. Frames are named by
//! `(video_id, frame_index)` against a dataset both sides can read.

pub mod remote;
pub mod server;

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backends::{BackendOp, FrameRef};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: i64 = 1;

/// The closed set of wire methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hello,
    InitSegmenter,
    Propagate,
    PromptBox,
    InitTracker,
    Track,
    Describe,
    Detect,
    Judge,
    ClassifySemantic,
    Shutdown,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Hello,
        Method::InitSegmenter,
        Method::Propagate,
        Method::PromptBox,
        Method::InitTracker,
        Method::Track,
        Method::Describe,
        Method::Detect,
        Method::Judge,
        Method::ClassifySemantic,
        Method::Shutdown,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Hello => "hello",
            Method::InitSegmenter => "init_segmenter",
            Method::Propagate => "propagate",
            Method::PromptBox => "prompt_box",
            Method::InitTracker => "init_tracker",
            Method::Track => "track",
            Method::Describe => "describe",
            Method::Detect => "detect",
            Method::Judge => "judge",
            Method::ClassifySemantic => "classify_semantic",
            Method::Shutdown => "shutdown",
        }
    }

    pub fn for_op(op: BackendOp) -> Method {
        match op {
            BackendOp::SegmenterInit => Method::InitSegmenter,
            BackendOp::SegmenterPropagate => Method::Propagate,
            BackendOp::SegmenterPromptBox => Method::PromptBox,
            BackendOp::TrackerInit => Method::InitTracker,
            BackendOp::TrackerTrack => Method::Track,
            BackendOp::DetectorDescribe => Method::Describe,
            BackendOp::DetectorDetect => Method::Detect,
            BackendOp::JudgeCompare => Method::Judge,
            BackendOp::JudgeClassifySemantic => Method::ClassifySemantic,
        }
    }

    /// Methods a server must offer to act as a segmenter, tracker, detector
    /// or judge.
    pub fn for_role(role: crate::backends::Role) -> &'static [Method] {
        use crate::backends::Role;
        match role {
            Role::Segmenter => &[Method::InitSegmenter, Method::Propagate, Method::PromptBox],
            Role::Tracker => &[Method::InitTracker, Method::Track],
            Role::Detector => &[Method::Describe, Method::Detect],
            Role::Judge => &[Method::Judge, Method::ClassifySemantic],
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::ProtocolViolation(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub id: u64,
    pub method: Method,
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<FrameRef>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub id: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_msg: Option<String>,
}

impl BackendResponse {
    pub fn ok(id: u64, payload: Value) -> Self {
        Self {
            id,
            status: Status::Ok,
            payload: Some(payload),
            error_kind: None,
            error_msg: None,
        }
    }

    pub fn error(id: u64, kind: &str, msg: impl Into<String>) -> Self {
        Self {
            id,
            status: Status::Error,
            payload: None,
            error_kind: Some(kind.to_string()),
            error_msg: Some(msg.into()),
        }
    }

    /// Payload of an ok response, or the remote error.
    pub fn into_result(self) -> Result<Value> {
        match self.status {
            Status::Ok => self
                .payload
                .ok_or_else(|| Error::ProtocolViolation(format!("response {} has no payload", self.id))),
            Status::Error => {
                let kind = self
                    .error_kind
                    .ok_or_else(|| Error::ProtocolViolation(format!("error response {} has no kind", self.id)))?;
                Err(Error::RemoteError {
                    kind,
                    message: self.error_msg.unwrap_or_default(),
                })
            }
        }
    }
}

/// Where a remote backend lives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    /// Command line of a server speaking the protocol on stdin/stdout.
    Exec(String),
    /// `host:port` of a listening server.
    Tcp(String),
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("exec:") {
            if cmd.trim().is_empty() {
                return Err(Error::Config("exec endpoint needs a command".into()));
            }
            return Ok(Endpoint::Exec(cmd.trim().to_string()));
        }
        if let Some(addr) = s.strip_prefix("tcp:") {
            let valid = addr
                .rsplit_once(':')
                .is_some_and(|(host, port)| !host.is_empty() && port.parse::<u16>().is_ok());
            if !valid {
                return Err(Error::Config(format!("tcp endpoint `{addr}` is not host:port")));
            }
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        Err(Error::Config(format!(
            "backend spec `{s}` must be mock:<profile>, exec:<command> or tcp:<host>:<port>"
        )))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Exec(cmd) => write!(f, "exec:{cmd}"),
            Endpoint::Tcp(addr) => write!(f, "tcp:{addr}"),
        }
    }
}

/// A live, handshaken connection. Strictly one request at a time.
pub struct Connection {
    endpoint: String,
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
    capabilities: Vec<String>,
    child: Option<Child>,
}

fn spawn_reader(reader: impl BufRead + Send + 'static) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in reader.lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl Connection {
    /// Opens the endpoint and performs the hello handshake.
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        let name = endpoint.to_string();
        let mut conn = match endpoint {
            Endpoint::Exec(cmd) => {
                let mut parts = cmd.split_whitespace();
                let program = parts.next().ok_or_else(|| Error::SpawnFailed(cmd.clone(), "empty command".into()))?;
                let mut child = Command::new(program)
                    .args(parts)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::SpawnFailed(cmd.clone(), e.to_string()))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Self::from_parts(name, Box::new(stdin), BufReader::new(stdout), Some(child), timeout)
            }
            Endpoint::Tcp(addr) => {
                let refused = |e: std::io::Error| Error::ConnectRefused(addr.clone(), e.to_string());
                let sock = addr
                    .to_socket_addrs()
                    .map_err(refused)?
                    .next()
                    .ok_or_else(|| Error::ConnectRefused(addr.clone(), "no address".into()))?;
                let stream = TcpStream::connect_timeout(&sock, timeout).map_err(refused)?;
                let _ = stream.set_nodelay(true);
                let read = stream.try_clone().map_err(refused)?;
                Self::from_parts(name, Box::new(stream), BufReader::new(read), None, timeout)
            }
        };
        match conn.handshake() {
            Ok(()) => Ok(conn),
            Err(Error::BackendUnavailable(msg)) if matches!(endpoint, Endpoint::Exec(_)) => {
                Err(Error::SpawnFailed(endpoint.to_string(), msg))
            }
            Err(e) => Err(e),
        }
    }

    /// Wraps an already-open byte stream. No handshake is performed.
    pub fn from_parts(
        endpoint: String,
        writer: Box<dyn Write + Send>,
        reader: impl BufRead + Send + 'static,
        child: Option<Child>,
        timeout: Duration,
    ) -> Self {
        Self {
            endpoint,
            writer,
            lines: spawn_reader(reader),
            next_id: 1,
            timeout,
            capabilities: Vec::new(),
            child,
        }
    }

    pub fn handshake(&mut self) -> Result<()> {
        let payload = match self.call(Method::Hello, json!({ "protocol_version": PROTOCOL_VERSION }), None) {
            Ok(p) => p,
            Err(Error::RemoteError { kind, .. }) if kind == "VersionMismatch" => {
                return Err(Error::VersionMismatch(-1))
            }
            Err(e) => return Err(e),
        };
        let version = payload
            .get("protocol_version")
            .and_then(Value::as_i64)
            .ok_or_else(|| Error::ProtocolViolation("hello reply lacks protocol_version".into()))?;
        if version != PROTOCOL_VERSION {
            return Err(Error::VersionMismatch(version));
        }
        let caps = payload
            .get("capabilities")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::ProtocolViolation("hello reply lacks capabilities".into()))?;
        self.capabilities = caps
            .iter()
            .map(|c| {
                c.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::ProtocolViolation("capability is not a string".into()))
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Method names the server announced in its hello reply.
    pub fn capabilities(&self) -> &[String] {
        &self.capabilities
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Fails unless the server offers every method in `methods`.
    pub fn require(&self, methods: &[Method]) -> Result<()> {
        for m in methods {
            if !self.capabilities.iter().any(|c| c == m.name()) {
                return Err(Error::BackendUnavailable(format!(
                    "{} does not offer `{m}`",
                    self.endpoint
                )));
            }
        }
        Ok(())
    }

    /// Sends one request and waits for its response. Responses to earlier
    /// requests that arrive late are skipped.
    pub fn call(&mut self, method: Method, params: Value, frame: Option<FrameRef>) -> Result<Value> {
        let id = self.next_id;
        self.next_id += 1;
        let request = BackendRequest {
            id,
            method,
            params,
            frame,
        };
        let mut line = serde_json::to_string(&request).expect("serializable");
        line.push('\n');
        let unavailable = |e: std::io::Error| Error::BackendUnavailable(format!("{}: {e}", self.endpoint));
        self.writer.write_all(line.as_bytes()).map_err(unavailable)?;
        self.writer.flush().map_err(unavailable)?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(Error::BackendUnavailable(format!("{}: {e}", self.endpoint))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::BackendTimeout(self.timeout.as_millis() as u64))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::BackendUnavailable(format!("{} closed the connection", self.endpoint)))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let response: BackendResponse = serde_json::from_str(&line)
                .map_err(|e| Error::ProtocolViolation(format!("malformed response line: {e}")))?;
            if response.id < id {
                continue;
            }
            if response.id > id {
                return Err(Error::ProtocolViolation(format!(
                    "response id {} does not match request {id}",
                    response.id
                )));
            }
            return response.into_result();
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        let _ = self.call_no_wait(Method::Shutdown);
        if let Some(child) = &mut self.child {
            let deadline = Instant::now() + Duration::from_millis(200);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(5));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Connection {
    fn call_no_wait(&mut self, method: Method) -> std::io::Result<()> {
        let request = BackendRequest {
            id: self.next_id,
            method,
            params: json!({}),
            frame: None,
        };
        self.next_id += 1;
        let mut line = serde_json::to_string(&request).expect("serializable");
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()
    }
}
