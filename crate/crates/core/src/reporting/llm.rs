//! Text-generation clients used to caption snapshots.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::clock::Clock;

pub const DEFAULT_BASE_URL: &str = "http://127.0.0.1:11434";
pub const DEFAULT_MODEL: &str = "llama3.2:1b";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CaptionError {
    #[error("caption deadline exceeded")]
    Timeout,
    #[error("language model unavailable: {0}")]
    LlmUnavailable(String),
    #[error("language model error: {0}")]
    LlmError(String),
    #[error("language model returned an empty caption")]
    EmptyCaption,
}

/// Body of a non-streaming generate request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LlmRequest {
    pub model: String,
    pub prompt: String,
    pub stream: bool,
}

impl LlmRequest {
    pub fn new(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        LlmRequest {
            model: model.into(),
            prompt: prompt.into(),
            stream: false,
        }
    }

    /// Exact bytes sent on the wire.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

pub trait LlmClient: Send + Sync {
    /// Blocking generate call bounded by `deadline`.
    fn generate(&self, req: &LlmRequest, deadline: Duration) -> Result<String, CaptionError>;

    fn descriptor(&self) -> String;

    /// Simulated service time, for clients whose latency is modelled rather
    /// than observed.
    fn modelled_latency(&self, _req: &LlmRequest) -> Option<Duration> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockMode {
    Caption,
    Unavailable,
    Malformed,
    Empty,
}

/// Deterministic stand-in for a language model with a fixed delay.
pub struct MockLlm {
    delay: Duration,
    mode: MockMode,
    clock: Arc<dyn Clock>,
    calls: AtomicU64,
}

impl MockLlm {
    pub fn new(delay: Duration, clock: Arc<dyn Clock>) -> Self {
        Self::with_mode(delay, MockMode::Caption, clock)
    }

    pub fn with_mode(delay: Duration, mode: MockMode, clock: Arc<dyn Clock>) -> Self {
        MockLlm {
            delay,
            mode,
            clock,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl LlmClient for MockLlm {
    fn generate(&self, req: &LlmRequest, deadline: Duration) -> Result<String, CaptionError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if self.mode == MockMode::Unavailable {
            return Err(CaptionError::LlmUnavailable("mock offline".into()));
        }
        if self.delay > deadline {
            self.clock.sleep(deadline);
            return Err(CaptionError::Timeout);
        }
        self.clock.sleep(self.delay);
        match self.mode {
            MockMode::Malformed => Err(CaptionError::LlmError("malformed response".into())),
            MockMode::Empty => Err(CaptionError::EmptyCaption),
            _ => Ok(mock_caption(&req.prompt)),
        }
    }

    fn descriptor(&self) -> String {
        format!("mock(delay={}ms)", self.delay.as_millis())
    }

    fn modelled_latency(&self, _req: &LlmRequest) -> Option<Duration> {
        match self.mode {
            MockMode::Unavailable => Some(Duration::ZERO),
            _ => Some(self.delay),
        }
    }
}

/// `ALERT: <label counts> at <timestamp>` pulled back out of the prompt.
fn mock_caption(prompt: &str) -> String {
    let ts = between(prompt, "At ", ", the detector");
    let summary = between(prompt, "observed: ", ". System configuration");
    match (ts, summary) {
        (Some(ts), Some(summary)) => {
            let counts: Vec<&str> = summary
                .split(", ")
                .map(|part| part.split(" (").next().unwrap_or(part))
                .collect();
            format!("ALERT: {} at {}", counts.join(", "), ts)
        }
        _ => format!("ALERT: activity {:016x}", fnv1a(prompt.as_bytes())),
    }
}

fn between<'a>(s: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = s.find(start)? + start.len();
    let len = s[from..].find(end)?;
    Some(&s[from..from + len])
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x100000001b3)
    })
}

/// Client for a local Ollama-compatible `/api/generate` endpoint.
pub struct OllamaClient {
    base_url: String,
    agent: ureq::Agent,
}

impl OllamaClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .new_agent();
        OllamaClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/api/generate", self.base_url)
    }
}

impl LlmClient for OllamaClient {
    fn generate(&self, req: &LlmRequest, deadline: Duration) -> Result<String, CaptionError> {
        let started = Instant::now();
        let mut resp = self
            .agent
            .post(&self.endpoint())
            .config()
            .timeout_global(Some(deadline))
            .build()
            .header("content-type", "application/json")
            .send(req.to_json().as_bytes())
            .map_err(map_transport)?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(map_transport)?;
        if started.elapsed() > deadline {
            return Err(CaptionError::Timeout);
        }
        if !(200..300).contains(&status) {
            return Err(CaptionError::LlmError(format!("HTTP {status}")));
        }
        parse_response(&body)
    }

    fn descriptor(&self) -> String {
        format!("ollama({})", self.base_url)
    }
}

/// Pull the `response` field out of a generate reply.
pub fn parse_response(body: &str) -> Result<String, CaptionError> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| CaptionError::LlmError(format!("malformed response: {e}")))?;
    let text = value
        .get("response")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CaptionError::LlmError("response field missing".into()))?;
    let text = text.trim();
    if text.is_empty() {
        return Err(CaptionError::EmptyCaption);
    }
    Ok(text.to_string())
}

fn map_transport(e: ureq::Error) -> CaptionError {
    use std::io::ErrorKind;
    match e {
        ureq::Error::Timeout(_) => CaptionError::Timeout,
        ureq::Error::HostNotFound | ureq::Error::ConnectionFailed => {
            CaptionError::LlmUnavailable(e.to_string())
        }
        ureq::Error::Io(io) => match io.kind() {
            ErrorKind::ConnectionRefused
            | ErrorKind::ConnectionReset
            | ErrorKind::ConnectionAborted
            | ErrorKind::NotConnected
            | ErrorKind::AddrNotAvailable => CaptionError::LlmUnavailable(io.to_string()),
            ErrorKind::TimedOut | ErrorKind::WouldBlock => CaptionError::Timeout,
            _ => CaptionError::LlmError(io.to_string()),
        },
        other => CaptionError::LlmError(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{SimClock, SystemClock};

    #[test]
    fn request_body_shape() {
        let r = LlmRequest::new("llama3.2:1b", "hi \"there\"");
        assert_eq!(
            r.to_json(),
            r#"{"model":"llama3.2:1b","prompt":"hi \"there\"","stream":false}"#
        );
    }

    #[test]
    fn mock_times_out_past_deadline_and_advances_nothing_real() {
        let clock = SimClock::default();
        let m = MockLlm::new(Duration::from_secs(70), Arc::new(clock));
        let r = LlmRequest::new("m", "p");
        assert_eq!(m.generate(&r, Duration::from_secs(60)), Err(CaptionError::Timeout));
        assert_eq!(m.modelled_latency(&r), Some(Duration::from_secs(70)));
    }

    #[test]
    fn mock_caption_lists_counts() {
        let m = MockLlm::new(Duration::ZERO, Arc::new(SystemClock));
        let prompt = "You are a surveillance reporting assistant. At 2026-01-01T00:00:05.000Z, the detector observed: car x1 (max 0.80), person x2 (max 0.91). System configuration: a=1. Write one concise alert sentence for the operator.";
        let c = m.generate(&LlmRequest::new("m", prompt), Duration::from_secs(1)).unwrap();
        assert_eq!(c, "ALERT: car x1, person x2 at 2026-01-01T00:00:05.000Z");
        assert_eq!(m.calls(), 1);
    }

    #[test]
    fn mock_fallback_is_stable() {
        let m = MockLlm::new(Duration::ZERO, Arc::new(SystemClock));
        let a = m.generate(&LlmRequest::new("m", "free text"), Duration::from_secs(1));
        let b = m.generate(&LlmRequest::new("m", "free text"), Duration::from_secs(1));
        assert_eq!(a, b);
        assert!(a.unwrap().starts_with("ALERT: "));
    }

    #[test]
    fn response_parsing() {
        assert_eq!(parse_response(r#"{"response":" hi ","done":true}"#), Ok("hi".into()));
        assert_eq!(parse_response(r#"{"response":"  "}"#), Err(CaptionError::EmptyCaption));
        assert!(matches!(parse_response("{}"), Err(CaptionError::LlmError(_))));
        assert!(matches!(parse_response("nope"), Err(CaptionError::LlmError(_))));
    }
}
