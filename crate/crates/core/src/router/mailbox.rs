use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use super::Event;

#[derive(Debug)]
pub enum PushOutcome {
    Accepted,
    /// Queue was full; the oldest entry was evicted to make room.
    Evicted(Arc<Event>),
    /// Owner stopped consuming; the new event is refused.
    Closed(Arc<Event>),
}

#[derive(Debug, Default)]
struct State {
    queue: VecDeque<Arc<Event>>,
    closed: bool,
}

/// Bounded drop-oldest queue feeding one background subscriber.
#[derive(Debug)]
pub struct Mailbox {
    state: Mutex<State>,
    ready: Condvar,
    capacity: usize,
    dropped: AtomicU64,
}

impl Mailbox {
    pub fn new(capacity: usize) -> Self {
        Mailbox {
            state: Mutex::new(State::default()),
            ready: Condvar::new(),
            capacity: capacity.max(1),
            dropped: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&self, event: Arc<Event>) -> PushOutcome {
        let mut st = self.state.lock().unwrap();
        if st.closed {
            self.dropped.fetch_add(1, Ordering::Relaxed);
            return PushOutcome::Closed(event);
        }
        let evicted = if st.queue.len() >= self.capacity {
            self.dropped.fetch_add(1, Ordering::Relaxed);
            st.queue.pop_front()
        } else {
            None
        };
        st.queue.push_back(event);
        drop(st);
        self.ready.notify_one();
        match evicted {
            Some(old) => PushOutcome::Evicted(old),
            None => PushOutcome::Accepted,
        }
    }

    pub fn try_pop(&self) -> Option<Arc<Event>> {
        self.state.lock().unwrap().queue.pop_front()
    }

    /// Wait up to `timeout` for an event. Returns `None` on timeout or once
    /// the mailbox is closed and empty.
    pub fn pop_timeout(&self, timeout: Duration) -> Option<Arc<Event>> {
        let st = self.state.lock().unwrap();
        let (mut st, _) = self
            .ready
            .wait_timeout_while(st, timeout, |s| s.queue.is_empty() && !s.closed)
            .unwrap();
        st.queue.pop_front()
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().unwrap().closed
    }

    /// Refuse further pushes and hand back whatever was still queued.
    pub fn close(&self) -> Vec<Arc<Event>> {
        let mut st = self.state.lock().unwrap();
        st.closed = true;
        let rest = st.queue.drain(..).collect();
        drop(st);
        self.ready.notify_all();
        rest
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}
