//! Slack transport: Web API for posting, Socket Mode for operator messages.
//!
//! Network access sits behind [`SlackApi`] and [`SocketConnector`] so the
//! adapter logic can be exercised without a workspace.

use std::net::TcpStream;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{ChannelAdapter, ChannelError, ChannelMessage, MessageId};
use crate::clock::Clock;

pub const BOT_TOKEN_VAR: &str = "CHANNEL_BOT_TOKEN";
pub const APP_TOKEN_VAR: &str = "CHANNEL_APP_TOKEN";
pub const API_BASE: &str = "https://slack.com/api";

const AUTH_ERRORS: [&str; 5] = [
    "invalid_auth",
    "not_authed",
    "token_revoked",
    "account_inactive",
    "token_expired",
];

/// Slack Web API calls.
pub trait SlackApi: Send + Sync {
    /// Form-encoded POST to `method`; returns the decoded body of an
    /// `ok: true` reply.
    fn call(&self, method: &str, token: &str, form: &[(&str, String)]) -> Result<Value, ChannelError>;

    /// Raw file upload to a URL handed out by the API.
    fn upload(&self, url: &str, bytes: &[u8]) -> Result<(), ChannelError>;
}

pub trait SocketConn: Send {
    /// Next text frame; `Ok(None)` when nothing arrived within `timeout`.
    fn read_text(&mut self, timeout: Duration) -> Result<Option<String>, ChannelError>;
    fn send_text(&mut self, text: &str) -> Result<(), ChannelError>;
}

pub trait SocketConnector: Send + Sync {
    fn connect(&self, url: &str) -> Result<Box<dyn SocketConn>, ChannelError>;
}

fn api_error(method: &str, body: &Value) -> ChannelError {
    let code = body.get("error").and_then(Value::as_str).unwrap_or("unknown_error");
    if AUTH_ERRORS.contains(&code) {
        ChannelError::AuthFailure(format!("{method}: {code}"))
    } else {
        ChannelError::SendFailed(format!("{method}: {code}"))
    }
}

/// [`SlackApi`] over HTTPS.
pub struct HttpSlackApi {
    base: String,
    agent: ureq::Agent,
}

impl HttpSlackApi {
    pub fn new(base: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        HttpSlackApi {
            base: base.into().trim_end_matches('/').to_string(),
            agent,
        }
    }
}

impl SlackApi for HttpSlackApi {
    fn call(&self, method: &str, token: &str, form: &[(&str, String)]) -> Result<Value, ChannelError> {
        let url = format!("{}/{method}", self.base);
        let mut resp = self
            .agent
            .post(&url)
            .header("authorization", &format!("Bearer {token}"))
            .send_form(form.iter().map(|(k, v)| (*k, v.as_str())))
            .map_err(|e| ChannelError::SendFailed(format!("{method}: {e}")))?;
        let status = resp.status().as_u16();
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ChannelError::SendFailed(format!("{method}: HTTP {status}: {e}")))?;
        if body.get("ok").and_then(Value::as_bool) == Some(true) {
            Ok(body)
        } else {
            Err(api_error(method, &body))
        }
    }

    fn upload(&self, url: &str, bytes: &[u8]) -> Result<(), ChannelError> {
        let resp = self
            .agent
            .post(url)
            .header("content-type", "application/octet-stream")
            .send(bytes)
            .map_err(|e| ChannelError::SendFailed(format!("upload: {e}")))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(ChannelError::SendFailed(format!("upload: HTTP {}", resp.status())))
        }
    }
}

/// [`SocketConnector`] over a real WebSocket.
pub struct WsConnector;

struct WsConn(tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>);

impl SocketConnector for WsConnector {
    fn connect(&self, url: &str) -> Result<Box<dyn SocketConn>, ChannelError> {
        let (ws, _) = tungstenite::connect(url)
            .map_err(|e| ChannelError::Disconnected(format!("socket connect: {e}")))?;
        Ok(Box::new(WsConn(ws)))
    }
}

impl WsConn {
    fn set_timeout(&mut self, timeout: Duration) {
        use tungstenite::stream::MaybeTlsStream;
        let t = Some(timeout.max(Duration::from_millis(1)));
        let _ = match self.0.get_mut() {
            MaybeTlsStream::Plain(s) => s.set_read_timeout(t),
            MaybeTlsStream::Rustls(s) => s.sock.set_read_timeout(t),
            _ => Ok(()),
        };
    }
}

impl SocketConn for WsConn {
    fn read_text(&mut self, timeout: Duration) -> Result<Option<String>, ChannelError> {
        use tungstenite::{Error, Message};
        self.set_timeout(timeout);
        match self.0.read() {
            Ok(Message::Text(t)) => Ok(Some(t.to_string())),
            Ok(Message::Close(_)) => Err(ChannelError::Disconnected("closed by peer".into())),
            Ok(_) => {
                let _ = self.0.flush();
                Ok(None)
            }
            Err(Error::Io(e))
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) =>
            {
                Ok(None)
            }
            Err(e) => Err(ChannelError::Disconnected(e.to_string())),
        }
    }

    fn send_text(&mut self, text: &str) -> Result<(), ChannelError> {
        self.0
            .send(tungstenite::Message::text(text))
            .map_err(|e| ChannelError::Disconnected(e.to_string()))
    }
}

/// Socket Mode acknowledgement for one envelope.
pub fn ack_json(envelope_id: &str) -> String {
    json!({ "envelope_id": envelope_id }).to_string()
}

/// Operator message carried by a Socket Mode envelope, if it is one from
/// `channel`. Bot posts and edits are ignored.
pub fn inbound_from_envelope(envelope: &Value, channel: &str) -> Option<(String, Option<String>)> {
    if envelope.get("type")?.as_str()? != "events_api" {
        return None;
    }
    let event = envelope.get("payload")?.get("event")?;
    if event.get("type")?.as_str()? != "message"
        || event.get("channel")?.as_str()? != channel
        || event.get("subtype").is_some()
        || event.get("bot_id").is_some()
    {
        return None;
    }
    let text = event.get("text")?.as_str()?.to_string();
    let user = event.get("user").and_then(Value::as_str).map(str::to_string);
    Some((text, user))
}

/// Doubling reconnect delay, capped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    initial: Duration,
    cap: Duration,
    next: Duration,
}

impl Backoff {
    pub fn new(initial: Duration, cap: Duration) -> Self {
        Backoff {
            initial,
            cap,
            next: initial,
        }
    }

    pub fn next_delay(&mut self) -> Duration {
        let d = self.next;
        self.next = (self.next * 2).min(self.cap);
        d
    }

    pub fn reset(&mut self) {
        self.next = self.initial;
    }
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff::new(Duration::from_secs(1), Duration::from_secs(60))
    }
}

#[derive(Clone)]
pub struct SlackConfig {
    pub channel_id: String,
    pub bot_token: String,
    pub app_token: String,
    pub api: Arc<dyn SlackApi>,
    pub connector: Arc<dyn SocketConnector>,
}

impl SlackConfig {
    /// Tokens from the environment, real network transports.
    pub fn from_env(channel_id: impl Into<String>) -> Result<Self, ChannelError> {
        let bot = std::env::var(BOT_TOKEN_VAR).map_err(|_| ChannelError::MissingCredential(BOT_TOKEN_VAR))?;
        let app = std::env::var(APP_TOKEN_VAR).map_err(|_| ChannelError::MissingCredential(APP_TOKEN_VAR))?;
        Ok(SlackConfig {
            channel_id: channel_id.into(),
            bot_token: bot,
            app_token: app,
            api: Arc::new(HttpSlackApi::new(API_BASE)),
            connector: Arc::new(WsConnector),
        })
    }
}

struct Link {
    conn: Option<Box<dyn SocketConn>>,
    backoff: Backoff,
    retry_at: Option<Instant>,
}

pub struct SlackAdapter {
    cfg: SlackConfig,
    clock: Arc<dyn Clock>,
    link: Mutex<Link>,
}

impl SlackAdapter {
    /// Verify the bot token and open the Socket Mode connection.
    pub fn connect(cfg: SlackConfig, clock: Arc<dyn Clock>) -> Result<Self, ChannelError> {
        cfg.api.call("auth.test", &cfg.bot_token, &[])?;
        let conn = open_socket(&cfg)?;
        Ok(SlackAdapter {
            cfg,
            clock,
            link: Mutex::new(Link {
                conn: Some(conn),
                backoff: Backoff::default(),
                retry_at: None,
            }),
        })
    }

    fn post_text(&self, text: &str) -> Result<MessageId, ChannelError> {
        let body = self.cfg.api.call(
            "chat.postMessage",
            &self.cfg.bot_token,
            &[("channel", self.cfg.channel_id.clone()), ("text", text.to_string())],
        )?;
        Ok(MessageId(
            body.get("ts").and_then(Value::as_str).unwrap_or_default().to_string(),
        ))
    }

    fn post_file(&self, text: &str, path: &Path) -> Result<MessageId, ChannelError> {
        let bytes = std::fs::read(path)
            .map_err(|e| ChannelError::SendFailed(format!("{}: {e}", path.display())))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "snapshot.png".into());
        let token = &self.cfg.bot_token;
        let ticket = self.cfg.api.call(
            "files.getUploadURLExternal",
            token,
            &[("filename", name.clone()), ("length", bytes.len().to_string())],
        )?;
        let field = |k: &str| {
            ticket
                .get(k)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| ChannelError::SendFailed(format!("upload ticket without {k}")))
        };
        let (url, file_id) = (field("upload_url")?, field("file_id")?);
        self.cfg.api.upload(&url, &bytes)?;
        self.cfg.api.call(
            "files.completeUploadExternal",
            token,
            &[
                ("files", json!([{ "id": file_id, "title": name }]).to_string()),
                ("channel_id", self.cfg.channel_id.clone()),
                ("initial_comment", text.to_string()),
            ],
        )?;
        Ok(MessageId(file_id))
    }
}

fn open_socket(cfg: &SlackConfig) -> Result<Box<dyn SocketConn>, ChannelError> {
    let body = cfg.api.call("apps.connections.open", &cfg.app_token, &[])?;
    let url = body
        .get("url")
        .and_then(Value::as_str)
        .ok_or_else(|| ChannelError::Disconnected("no socket url".into()))?;
    cfg.connector.connect(url)
}

impl ChannelAdapter for SlackAdapter {
    fn post(&self, msg: &ChannelMessage) -> Result<MessageId, ChannelError> {
        match &msg.attachment {
            Some(path) => self.post_file(&msg.text, path),
            None => self.post_text(&msg.text),
        }
    }

    fn recv_inbound(&self, timeout: Duration) -> Option<ChannelMessage> {
        let deadline = Instant::now() + timeout;
        let mut link = self.link.lock().unwrap();
        loop {
            let now = Instant::now();
            if link.conn.is_none() {
                if link.retry_at.is_some_and(|t| now < t) {
                    let wait = link.retry_at.unwrap().min(deadline) - now;
                    drop(link);
                    std::thread::sleep(wait);
                    link = self.link.lock().unwrap();
                    if Instant::now() >= deadline {
                        return None;
                    }
                    continue;
                }
                match open_socket(&self.cfg) {
                    Ok(c) => {
                        log::info!("socket reconnected");
                        link.conn = Some(c);
                        link.backoff.reset();
                        link.retry_at = None;
                    }
                    Err(e) => {
                        let d = link.backoff.next_delay();
                        log::warn!("socket reconnect failed ({e}); retrying in {d:?}");
                        link.retry_at = Some(Instant::now() + d);
                        continue;
                    }
                }
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            let conn = link.conn.as_mut().expect("connected");
            match conn.read_text(remaining) {
                Ok(Some(text)) => {
                    let Ok(envelope) = serde_json::from_str::<Value>(&text) else {
                        continue;
                    };
                    if let Some(id) = envelope.get("envelope_id").and_then(Value::as_str) {
                        if let Err(e) = conn.send_text(&ack_json(id)) {
                            log::warn!("ack failed: {e}");
                        }
                    }
                    if envelope.get("type").and_then(Value::as_str) == Some("disconnect") {
                        link.conn = None;
                        continue;
                    }
                    if let Some((text, user)) = inbound_from_envelope(&envelope, &self.cfg.channel_id) {
                        let mut msg =
                            ChannelMessage::text(self.cfg.channel_id.clone(), text, self.clock.now());
                        msg.user = user;
                        return Some(msg);
                    }
                }
                Ok(None) => {}
                Err(e) => {
                    log::warn!("socket lost: {e}");
                    link.conn = None;
                    let d = link.backoff.next_delay();
                    link.retry_at = Some(Instant::now() + d);
                }
            }
            if Instant::now() >= deadline {
                return None;
            }
        }
    }

    fn descriptor(&self) -> String {
        format!("slack({})", self.cfg.channel_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_to_cap_and_resets() {
        let mut b = Backoff::default();
        let seq: Vec<u64> = (0..9).map(|_| b.next_delay().as_secs()).collect();
        assert_eq!(seq, [1, 2, 4, 8, 16, 32, 60, 60, 60]);
        b.reset();
        assert_eq!(b.next_delay(), Duration::from_secs(1));
    }

    #[test]
    fn envelope_filtering() {
        let ev = |extra: Value| {
            let mut event = json!({"type":"message","channel":"C1","user":"U1","text":"status"});
            event.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
            json!({"envelope_id":"e1","type":"events_api","payload":{"event":event}})
        };
        assert_eq!(
            inbound_from_envelope(&ev(json!({})), "C1"),
            Some(("status".into(), Some("U1".into())))
        );
        assert_eq!(inbound_from_envelope(&ev(json!({})), "C2"), None);
        assert_eq!(inbound_from_envelope(&ev(json!({"bot_id":"B1"})), "C1"), None);
        assert_eq!(inbound_from_envelope(&ev(json!({"subtype":"message_changed"})), "C1"), None);
        assert_eq!(inbound_from_envelope(&json!({"type":"hello"}), "C1"), None);
    }
}
