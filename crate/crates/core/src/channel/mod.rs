//! Operator-facing messaging: adapters for concrete chat transports, the
//! command grammar, and the communication/control agents.

pub mod agents;
pub mod command;
pub mod console;
pub mod mock;
pub mod slack;

use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

use crate::clock::Timestamp;

pub use agents::{CommunicationAgent, ControlAgent, StatusView, HELP_TEXT};
pub use command::{parse_command, Command, ConfigUpdate, ValidationError};
pub use console::ConsoleAdapter;
pub use mock::MockAdapter;
pub use slack::{SlackAdapter, SlackConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMessage {
    pub channel: String,
    /// Sender, for inbound messages.
    pub user: Option<String>,
    pub text: String,
    /// Absolute path of a file to attach.
    pub attachment: Option<PathBuf>,
    pub ts: Timestamp,
}

impl ChannelMessage {
    pub fn text(channel: impl Into<String>, text: impl Into<String>, ts: Timestamp) -> Self {
        ChannelMessage {
            channel: channel.into(),
            user: None,
            text: text.into(),
            attachment: None,
            ts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct MessageId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("send failed: {0}")]
    SendFailed(String),
    #[error("disconnected: {0}")]
    Disconnected(String),
    #[error("missing credential {0}")]
    MissingCredential(&'static str),
}

/// A chat transport. Shared between the posting and polling sides.
pub trait ChannelAdapter: Send + Sync {
    fn post(&self, msg: &ChannelMessage) -> Result<MessageId, ChannelError>;

    /// Next operator message, waiting at most `timeout`.
    fn recv_inbound(&self, timeout: Duration) -> Option<ChannelMessage>;

    fn descriptor(&self) -> String;

    /// True once no further inbound messages can arrive.
    fn is_closed(&self) -> bool {
        false
    }
}
