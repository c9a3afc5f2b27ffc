use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::digest::digest_of;

/// A scalar parameter or shape value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    /// Parses a command-line style literal: integers, `true`/`false`, else a string.
    pub fn parse_loose(text: &str) -> Value {
        let text = text.trim();
        if let Ok(v) = text.parse::<i64>() {
            return Value::Int(v);
        }
        match text {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => Value::Str(text.to_string()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(v) => write!(f, "{v}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Str(v) => f.write_str(v),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}

fn render_assignments(map: &BTreeMap<String, Value>) -> String {
    map.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// One point of a configuration space: a value for every parameter.
///
/// The digest covers the sorted-key canonical form, so it is identical on
/// every process and platform that builds the same assignment.
#[derive(Debug, Clone)]
pub struct KernelConfig {
    assignments: BTreeMap<String, Value>,
    digest: String,
}

impl KernelConfig {
    pub fn new(assignments: BTreeMap<String, Value>) -> Self {
        let digest = digest_of(&assignments);
        KernelConfig {
            assignments,
            digest,
        }
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<Value>,
    {
        Self::new(
            pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.assignments.get(name)
    }

    pub fn assignments(&self) -> &BTreeMap<String, Value> {
        &self.assignments
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }
}

impl PartialEq for KernelConfig {
    fn eq(&self, other: &Self) -> bool {
        self.assignments == other.assignments
    }
}

impl Eq for KernelConfig {}

impl fmt::Display for KernelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_assignments(&self.assignments))
    }
}

impl Serialize for KernelConfig {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.assignments.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for KernelConfig {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        BTreeMap::deserialize(deserializer).map(KernelConfig::new)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("shape has no dimensions")]
    Empty,
    #[error("malformed shape dimension `{0}` (expected name=value)")]
    Malformed(String),
}

/// Workload identity: problem dimensions such as batch size or sequence length.
#[derive(Debug, Clone)]
pub struct ShapeKey {
    dims: BTreeMap<String, Value>,
    digest: String,
}

impl ShapeKey {
    pub fn new(dims: BTreeMap<String, Value>) -> Result<Self, ShapeError> {
        if dims.is_empty() {
            return Err(ShapeError::Empty);
        }
        let digest = digest_of(&dims);
        Ok(ShapeKey { dims, digest })
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self, ShapeError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<Value>,
    {
        Self::new(
            pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.dims.get(name)
    }

    pub fn dims(&self) -> &BTreeMap<String, Value> {
        &self.dims
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }
}

impl PartialEq for ShapeKey {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
    }
}

impl Eq for ShapeKey {}

impl std::hash::Hash for ShapeKey {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.dims.hash(state);
    }
}

impl fmt::Display for ShapeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_assignments(&self.dims))
    }
}

/// Parses `batch_size=4,seq_len=512,dtype=fp16`.
impl FromStr for ShapeKey {
    type Err = ShapeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut dims = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| ShapeError::Malformed(part.to_string()))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(ShapeError::Malformed(part.to_string()));
            }
            dims.insert(name.to_string(), Value::parse_loose(value));
        }
        ShapeKey::new(dims)
    }
}

impl Serialize for ShapeKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.dims.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ShapeKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let dims = BTreeMap::deserialize(deserializer)?;
        ShapeKey::new(dims).map_err(serde::de::Error::custom)
    }
}
