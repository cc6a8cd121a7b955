use std::collections::BTreeMap;
use std::fmt;
use std::path::{Component, Path, PathBuf};

use crate::clock::Timestamp;
use crate::reporting::ConfigArgs;
use crate::Detection;

pub const COMMAND: &str = "command";
pub const STATUS: &str = "status";
pub const SNAPSHOT: &str = "snapshot";
pub const REPORT: &str = "report";
pub const SHUTDOWN: &str = "shutdown";

/// Event types the router accepts. Fixed at construction.
pub const EVENT_TYPES: [&str; 5] = [COMMAND, STATUS, SNAPSHOT, REPORT, SHUTDOWN];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId(String);

impl AgentId {
    pub const ROUTER: &'static str = "router";

    pub(crate) fn new(name: impl Into<String>) -> Self {
        AgentId(name.into())
    }

    pub fn router() -> Self {
        AgentId(Self::ROUTER.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PayloadValue {
    Text(String),
    Integer(i64),
    Real(f64),
    Bool(bool),
    /// Relative to the run's snapshot directory.
    Path(PathBuf),
    Detections(Vec<Detection>),
    Config(ConfigArgs),
}

impl PayloadValue {
    /// Reason the value is not acceptable in a payload, if any.
    pub(crate) fn invalid_reason(&self) -> Option<String> {
        match self {
            PayloadValue::Real(v) if !v.is_finite() => Some(format!("non-finite real {v}")),
            PayloadValue::Path(p) => {
                if p.as_os_str().is_empty() {
                    return Some("empty path".into());
                }
                let escapes = p.components().any(|c| {
                    matches!(
                        c,
                        Component::RootDir | Component::Prefix(_) | Component::ParentDir
                    )
                });
                escapes.then(|| format!("path {} escapes the snapshot directory", p.display()))
            }
            PayloadValue::Detections(dets) => dets
                .iter()
                .find(|d| !(0.0..=1.0).contains(&d.confidence) || d.label.is_empty())
                .map(|d| format!("invalid detection {:?}", d.label)),
            _ => None,
        }
    }
}

impl From<&str> for PayloadValue {
    fn from(s: &str) -> Self {
        PayloadValue::Text(s.to_string())
    }
}

impl From<String> for PayloadValue {
    fn from(s: String) -> Self {
        PayloadValue::Text(s)
    }
}

impl From<i64> for PayloadValue {
    fn from(v: i64) -> Self {
        PayloadValue::Integer(v)
    }
}

impl From<f64> for PayloadValue {
    fn from(v: f64) -> Self {
        PayloadValue::Real(v)
    }
}

impl From<bool> for PayloadValue {
    fn from(v: bool) -> Self {
        PayloadValue::Bool(v)
    }
}

impl From<Vec<Detection>> for PayloadValue {
    fn from(v: Vec<Detection>) -> Self {
        PayloadValue::Detections(v)
    }
}

impl From<ConfigArgs> for PayloadValue {
    fn from(v: ConfigArgs) -> Self {
        PayloadValue::Config(v)
    }
}

pub type Payload = BTreeMap<String, PayloadValue>;

/// Build a payload from `(key, value)` pairs; later duplicates win.
pub fn payload<K, V, I>(entries: I) -> Payload
where
    K: Into<String>,
    V: Into<PayloadValue>,
    I: IntoIterator<Item = (K, V)>,
{
    entries
        .into_iter()
        .map(|(k, v)| (k.into(), v.into()))
        .collect()
}

/// Immutable once published; `seq` is 0 until the router assigns it.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub event_type: String,
    pub source: AgentId,
    pub seq: u64,
    pub timestamp: Timestamp,
    pub payload: Payload,
}

impl Event {
    pub fn text(&self, key: &str) -> Option<&str> {
        match self.payload.get(key)? {
            PayloadValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn path(&self, key: &str) -> Option<&Path> {
        match self.payload.get(key)? {
            PayloadValue::Path(p) => Some(p),
            _ => None,
        }
    }

    pub fn integer(&self, key: &str) -> Option<i64> {
        match self.payload.get(key)? {
            PayloadValue::Integer(v) => Some(*v),
            _ => None,
        }
    }

    pub fn detections(&self, key: &str) -> Option<&[Detection]> {
        match self.payload.get(key)? {
            PayloadValue::Detections(d) => Some(d),
            _ => None,
        }
    }

    pub fn config(&self, key: &str) -> Option<&ConfigArgs> {
        match self.payload.get(key)? {
            PayloadValue::Config(c) => Some(c),
            _ => None,
        }
    }
}
