use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::{ChannelAdapter, ChannelError, ChannelMessage, MessageId};
use crate::clock::Timestamp;

#[derive(Default)]
struct State {
    inbound: VecDeque<ChannelMessage>,
    outbound: Vec<ChannelMessage>,
    fail_posts: u32,
    closed: bool,
}

/// In-memory channel for tests and simulated runs.
#[derive(Default)]
pub struct MockAdapter {
    channel: String,
    state: Mutex<State>,
    ready: Condvar,
}

impl MockAdapter {
    pub fn new(channel: impl Into<String>) -> Self {
        MockAdapter {
            channel: channel.into(),
            ..Default::default()
        }
    }

    pub fn channel(&self) -> &str {
        &self.channel
    }

    pub fn inject(&self, msg: ChannelMessage) {
        self.state.lock().unwrap().inbound.push_back(msg);
        self.ready.notify_all();
    }

    pub fn inject_text(&self, text: &str, ts: Timestamp) {
        let mut msg = ChannelMessage::text(self.channel.clone(), text, ts);
        msg.user = Some("operator".into());
        self.inject(msg);
    }

    /// Everything posted so far.
    pub fn posted(&self) -> Vec<ChannelMessage> {
        self.state.lock().unwrap().outbound.clone()
    }

    /// Posted messages, removed from the log.
    pub fn collect(&self) -> Vec<ChannelMessage> {
        std::mem::take(&mut self.state.lock().unwrap().outbound)
    }

    /// Make the next `n` posts fail.
    pub fn fail_next_posts(&self, n: u32) {
        self.state.lock().unwrap().fail_posts = n;
    }

    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_all();
    }
}

impl ChannelAdapter for MockAdapter {
    fn post(&self, msg: &ChannelMessage) -> Result<MessageId, ChannelError> {
        let mut st = self.state.lock().unwrap();
        if st.fail_posts > 0 {
            st.fail_posts -= 1;
            return Err(ChannelError::SendFailed("mock failure".into()));
        }
        st.outbound.push(msg.clone());
        Ok(MessageId(format!("mock-{}", st.outbound.len())))
    }

    fn recv_inbound(&self, timeout: Duration) -> Option<ChannelMessage> {
        let st = self.state.lock().unwrap();
        let (mut st, _) = self
            .ready
            .wait_timeout_while(st, timeout, |s| s.inbound.is_empty() && !s.closed)
            .unwrap();
        st.inbound.pop_front()
    }

    fn descriptor(&self) -> String {
        format!("mock({})", self.channel)
    }

    fn is_closed(&self) -> bool {
        let st = self.state.lock().unwrap();
        st.closed && st.inbound.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_in_and_out() {
        let m = MockAdapter::new("C1");
        m.inject_text("start", Timestamp(1));
        m.inject_text("status", Timestamp(2));
        assert_eq!(m.recv_inbound(Duration::ZERO).unwrap().text, "start");
        assert_eq!(m.recv_inbound(Duration::ZERO).unwrap().text, "status");
        assert!(m.recv_inbound(Duration::from_millis(5)).is_none());
        m.post(&ChannelMessage::text("C1", "a", Timestamp(3))).unwrap();
        m.fail_next_posts(1);
        assert!(m.post(&ChannelMessage::text("C1", "b", Timestamp(3))).is_err());
        m.post(&ChannelMessage::text("C1", "c", Timestamp(3))).unwrap();
        let texts: Vec<_> = m.collect().into_iter().map(|x| x.text).collect();
        assert_eq!(texts, ["a", "c"]);
        assert!(m.posted().is_empty());
    }
}
