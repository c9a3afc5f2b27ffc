//! Benchmark-runner wire protocol, version 1.
//!
//! JSON Lines over the runner's stdin/stdout, one UTF-8 object per line:
//!
//! ```text
//! -> {"type":"hello","protocol":1}
//! <- {"type":"hello","protocol":1,"fingerprint":{...},"capabilities":["evaluate"]}
//! -> {"type":"evaluate","config":{...},"shape":{...},"warmups":3,"reps":10}
//! <- {"type":"result","status":"ok","compile_ms":412.0,"latencies_ms":[1.91,1.88]}
//! <- {"type":"result","status":"invalid","reason":"..."}
//! <- {"type":"result","status":"error","reason":"..."}
//! -> {"type":"shutdown"}
//! ```
//!
//! Unknown fields are ignored; an unknown `type` is a protocol error. The
//! hello fingerprint carries the six runner-side [`RunnerIdentity`] fields;
//! the framework adds the space digest and the agreed protocol version.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};

use super::{EvalOutcome, Measurement, RunnerIdentity};
use crate::configspace::{KernelConfig, ShapeKey};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed JSON line: {0}")]
    Malformed(String),
    #[error("message is not a JSON object")]
    NotAnObject,
    #[error("message has no `type` field")]
    MissingType,
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("expected a `{expected}` message, got `{found}`")]
    UnexpectedType {
        expected: &'static str,
        found: String,
    },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{field}`: {reason}")]
    BadField { field: String, reason: String },
    #[error("protocol version mismatch: framework speaks {framework}, runner speaks {runner}")]
    VersionMismatch { framework: u32, runner: u64 },
}

/// Framework-to-runner messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Request {
    Hello {
        protocol: u32,
    },
    Evaluate {
        config: KernelConfig,
        shape: ShapeKey,
        warmups: u32,
        reps: u32,
    },
    Shutdown,
}

impl Request {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("requests serialize")
    }
}

/// Parses one request line on the runner side.
pub fn parse_request(line: &str) -> Result<Request, ProtocolError> {
    let value: Json =
        serde_json::from_str(line).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let ty = message_type(&value)?.to_string();
    if !matches!(ty.as_str(), "hello" | "evaluate" | "shutdown") {
        return Err(ProtocolError::UnknownType(ty));
    }
    serde_json::from_value(value).map_err(|e| ProtocolError::BadField {
        field: ty,
        reason: e.to_string(),
    })
}

fn message_type(value: &Json) -> Result<&str, ProtocolError> {
    let obj = value.as_object().ok_or(ProtocolError::NotAnObject)?;
    obj.get("type")
        .ok_or(ProtocolError::MissingType)?
        .as_str()
        .ok_or_else(|| ProtocolError::BadField {
            field: "type".into(),
            reason: "not a string".into(),
        })
}

/// Runner replies, as seen by the framework.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Hello(HelloReply),
    Result(ResultReply),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HelloReply {
    pub protocol: u64,
    pub identity: RunnerIdentity,
    pub capabilities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResultReply {
    Ok {
        compile_ms: f64,
        latencies_ms: Vec<f64>,
    },
    Invalid {
        reason: String,
    },
    Error {
        reason: String,
    },
}

pub fn parse_reply(line: &str) -> Result<Reply, ProtocolError> {
    let value: Json =
        serde_json::from_str(line).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let ty = message_type(&value)?;
    let obj = value.as_object().expect("checked by message_type");
    match ty {
        "hello" => parse_hello(obj).map(Reply::Hello),
        "result" => parse_result(obj).map(Reply::Result),
        other => Err(ProtocolError::UnknownType(other.to_string())),
    }
}

fn field<'a>(obj: &'a Map<String, Json>, name: &str) -> Result<&'a Json, ProtocolError> {
    obj.get(name)
        .ok_or_else(|| ProtocolError::MissingField(name.to_string()))
}

fn bad(field: &str, reason: &str) -> ProtocolError {
    ProtocolError::BadField {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

fn string_field(obj: &Map<String, Json>, name: &str) -> Result<String, ProtocolError> {
    field(obj, name)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| bad(name, "not a string"))
}

fn parse_hello(obj: &Map<String, Json>) -> Result<HelloReply, ProtocolError> {
    let protocol = field(obj, "protocol")?
        .as_u64()
        .ok_or_else(|| bad("protocol", "not a non-negative integer"))?;
    if protocol != u64::from(PROTOCOL_VERSION) {
        return Err(ProtocolError::VersionMismatch {
            framework: PROTOCOL_VERSION,
            runner: protocol,
        });
    }
    let fp = field(obj, "fingerprint")?
        .as_object()
        .ok_or_else(|| bad("fingerprint", "not an object"))?;
    let mut values = Vec::with_capacity(RunnerIdentity::FIELDS.len());
    for name in RunnerIdentity::FIELDS {
        let v = fp
            .get(name)
            .ok_or_else(|| ProtocolError::MissingField(format!("fingerprint.{name}")))?;
        let text = match v {
            Json::String(s) => s.clone(),
            Json::Number(n) => n.to_string(),
            _ => return Err(bad(&format!("fingerprint.{name}"), "not a string")),
        };
        if text.trim().is_empty() {
            return Err(bad(&format!("fingerprint.{name}"), "empty"));
        }
        values.push(text);
    }
    let mut it = values.into_iter();
    let mut next = || it.next().expect("one value per field");
    let identity = RunnerIdentity {
        device_name: next(),
        driver_version: next(),
        toolchain_version: next(),
        runner_id: next(),
        runner_version: next(),
        kernel_source_digest: next(),
    };
    let capabilities = match obj.get("capabilities") {
        None => Vec::new(),
        Some(Json::Array(items)) => items
            .iter()
            .map(|c| {
                c.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| bad("capabilities", "entries must be strings"))
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(bad("capabilities", "not an array")),
    };
    Ok(HelloReply {
        protocol,
        identity,
        capabilities,
    })
}

fn parse_result(obj: &Map<String, Json>) -> Result<ResultReply, ProtocolError> {
    let status = string_field(obj, "status")?;
    match status.as_str() {
        "ok" => {
            let compile_ms = field(obj, "compile_ms")?
                .as_f64()
                .ok_or_else(|| bad("compile_ms", "not a number"))?;
            let latencies_ms = field(obj, "latencies_ms")?
                .as_array()
                .ok_or_else(|| bad("latencies_ms", "not an array"))?
                .iter()
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| bad("latencies_ms", "entries must be numbers"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ResultReply::Ok {
                compile_ms,
                latencies_ms,
            })
        }
        "invalid" => Ok(ResultReply::Invalid {
            reason: string_field(obj, "reason")?,
        }),
        "error" => Ok(ResultReply::Error {
            reason: string_field(obj, "reason")?,
        }),
        other => Err(bad("status", &format!("unknown status `{other}`"))),
    }
}

impl ResultReply {
    /// Converts a reply into an outcome, checking the repetition count.
    pub fn into_outcome(self, warmups: u32, reps: u32) -> EvalOutcome {
        match self {
            ResultReply::Ok {
                compile_ms,
                latencies_ms,
            } => {
                if latencies_ms.len() != reps as usize {
                    return EvalOutcome::failure(
                        format!(
                            "protocol breach: runner returned {} latencies, expected {reps}",
                            latencies_ms.len()
                        ),
                        false,
                    );
                }
                match Measurement::new(compile_ms, latencies_ms, warmups) {
                    Ok(m) => EvalOutcome::Ok(m),
                    Err(e) => EvalOutcome::failure(format!("protocol breach: {e}"), false),
                }
            }
            ResultReply::Invalid { reason } => EvalOutcome::Invalid { reason },
            ResultReply::Error { reason } => EvalOutcome::failure(reason, false),
        }
    }
}

/// Runner-side hello reply.
pub fn hello_reply(identity: &RunnerIdentity, capabilities: &[&str]) -> Json {
    json!({
        "type": "hello",
        "protocol": PROTOCOL_VERSION,
        "fingerprint": identity,
        "capabilities": capabilities,
    })
}

/// Runner-side result reply for an outcome. Failures map to `status:"error"`.
pub fn result_reply(outcome: &EvalOutcome) -> Json {
    match outcome {
        EvalOutcome::Ok(m) => json!({
            "type": "result",
            "status": "ok",
            "compile_ms": m.compile_ms(),
            "latencies_ms": m.latencies_ms(),
        }),
        EvalOutcome::Invalid { reason } => json!({
            "type": "result",
            "status": "invalid",
            "reason": reason,
        }),
        EvalOutcome::Failure { reason, .. } => json!({
            "type": "result",
            "status": "error",
            "reason": reason,
        }),
    }
}
