//! In-process publish/subscribe router.
//!
//! Producers enqueue events from any thread with [`Router::send_to_agent`];
//! a single dispatch context drains the bounded queue in sequence order.
//! Inline subscribers run on the dispatch path. Background subscribers get
//! the event pushed onto their own drop-oldest [`Mailbox`] and consume it
//! on their own time.

mod event;
mod mailbox;
mod stats;

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use thiserror::Error;

pub use event::{
    payload, AgentId, Event, Payload, PayloadValue, COMMAND, EVENT_TYPES, REPORT, SHUTDOWN,
    SNAPSHOT, STATUS,
};
pub use mailbox::{Mailbox, PushOutcome};
pub use stats::{DeliveryOutcome, RouterStats, TypeCounters};

use crate::clock::{Clock, Timestamp};

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;
pub const DEFAULT_MAILBOX_CAPACITY: usize = 16;
/// Inline handlers are expected to return within this budget.
pub const INLINE_BUDGET: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouterError {
    #[error("agent {0:?} is already registered")]
    DuplicateAgent(String),
    #[error("agent name must not be empty")]
    EmptyAgentName,
    #[error("unknown agent {0:?}")]
    UnknownAgent(String),
    #[error("unknown event type {0:?}")]
    UnknownEventType(String),
    #[error("agent {agent:?} already subscribed to {event_type:?}")]
    DuplicateSubscription { agent: String, event_type: String },
    #[error("invalid payload value for {key:?}: {reason}")]
    InvalidPayloadValue { key: String, reason: String },
    #[error("router queue full ({capacity} events)")]
    QueueFull { capacity: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct HandlerError(pub String);

impl HandlerError {
    pub fn new(msg: impl Into<String>) -> Self {
        HandlerError(msg.into())
    }
}

/// Receives events for one registered agent.
pub trait Handler: Send + Sync {
    fn handle(&self, event: &Event) -> Result<(), HandlerError>;

    /// Called on the dispatch path when a background delivery for this
    /// agent was evicted or refused by its mailbox.
    fn on_dropped(&self, _event: &Event) {}
}

impl<F> Handler for F
where
    F: Fn(&Event) -> Result<(), HandlerError> + Send + Sync,
{
    fn handle(&self, event: &Event) -> Result<(), HandlerError> {
        self(event)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryMode {
    Inline,
    Background,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub agent: AgentId,
    pub event_type: String,
    pub mode: DeliveryMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    /// Fan out to every subscriber of the event's type.
    Router,
    Agent(AgentId),
}

impl From<&AgentId> for Target {
    fn from(id: &AgentId) -> Self {
        if id.as_str() == AgentId::ROUTER {
            Target::Router
        } else {
            Target::Agent(id.clone())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouterConfig {
    pub queue_capacity: usize,
    pub mailbox_capacity: usize,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            mailbox_capacity: DEFAULT_MAILBOX_CAPACITY,
        }
    }
}

/// Cooperative stop flag for [`Router::run_dispatch`] and agent loops.
#[derive(Debug, Clone, Default)]
pub struct StopSignal(Arc<AtomicBool>);

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(&self) {
        self.0.store(true, Ordering::Release);
    }

    pub fn is_stopped(&self) -> bool {
        self.0.load(Ordering::Acquire)
    }
}

thread_local! {
    static IN_DISPATCH: Cell<bool> = const { Cell::new(false) };
}

/// True while the calling thread is executing router dispatch.
pub fn in_dispatch_context() -> bool {
    IN_DISPATCH.with(|c| c.get())
}

struct DispatchGuard;

impl DispatchGuard {
    fn enter() -> Self {
        IN_DISPATCH.with(|c| c.set(true));
        DispatchGuard
    }
}

impl Drop for DispatchGuard {
    fn drop(&mut self) {
        IN_DISPATCH.with(|c| c.set(false));
    }
}

struct AgentEntry {
    handler: Arc<dyn Handler>,
    mailbox: Arc<Mailbox>,
}

struct Queued {
    event: Arc<Event>,
    target: Target,
    enqueued_us: u64,
}

#[derive(Default)]
struct Queue {
    items: VecDeque<Queued>,
    next_seq: u64,
}

type Observer = Arc<dyn Fn(&Event) + Send + Sync>;

struct Inner {
    clock: Arc<dyn Clock>,
    config: RouterConfig,
    event_types: BTreeSet<String>,
    agents: RwLock<BTreeMap<AgentId, AgentEntry>>,
    subscriptions: RwLock<Vec<Subscription>>,
    queue: Mutex<Queue>,
    queue_ready: Condvar,
    dispatch_lock: Mutex<()>,
    stats: Mutex<RouterStats>,
    log: Mutex<Option<Box<dyn Write + Send>>>,
    observers: RwLock<Vec<Observer>>,
}

/// Cheaply cloneable handle to a shared router.
#[derive(Clone)]
pub struct Router {
    inner: Arc<Inner>,
}

impl Router {
    pub fn new(clock: Arc<dyn Clock>, config: RouterConfig) -> Self {
        Router {
            inner: Arc::new(Inner {
                clock,
                config,
                event_types: EVENT_TYPES.iter().map(|s| s.to_string()).collect(),
                agents: RwLock::new(BTreeMap::new()),
                subscriptions: RwLock::new(Vec::new()),
                queue: Mutex::new(Queue {
                    items: VecDeque::new(),
                    next_seq: 1,
                }),
                queue_ready: Condvar::new(),
                dispatch_lock: Mutex::new(()),
                stats: Mutex::new(RouterStats::default()),
                log: Mutex::new(None),
                observers: RwLock::new(Vec::new()),
            }),
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.inner.clock
    }

    pub fn config(&self) -> RouterConfig {
        self.inner.config
    }

    pub fn is_event_type(&self, event_type: &str) -> bool {
        self.inner.event_types.contains(event_type)
    }

    /// Write one structured line per dispatched event to `sink`.
    pub fn set_log_sink(&self, sink: Box<dyn Write + Send>) {
        *self.inner.log.lock().unwrap() = Some(sink);
    }

    /// Observe every event as it is dispatched, before any subscriber.
    pub fn add_observer(&self, observer: impl Fn(&Event) + Send + Sync + 'static) {
        self.inner.observers.write().unwrap().push(Arc::new(observer));
    }

    pub fn register_agent(
        &self,
        name: &str,
        handler: Arc<dyn Handler>,
    ) -> Result<AgentId, RouterError> {
        self.register_agent_with_mailbox(name, handler, self.inner.config.mailbox_capacity)
    }

    pub fn register_agent_with_mailbox(
        &self,
        name: &str,
        handler: Arc<dyn Handler>,
        mailbox_capacity: usize,
    ) -> Result<AgentId, RouterError> {
        if name.is_empty() {
            return Err(RouterError::EmptyAgentName);
        }
        let id = AgentId::new(name);
        let mut agents = self.inner.agents.write().unwrap();
        if name == AgentId::ROUTER || agents.contains_key(&id) {
            return Err(RouterError::DuplicateAgent(name.to_string()));
        }
        agents.insert(
            id.clone(),
            AgentEntry {
                handler,
                mailbox: Arc::new(Mailbox::new(mailbox_capacity)),
            },
        );
        Ok(id)
    }

    pub fn agents(&self) -> Vec<AgentId> {
        self.inner.agents.read().unwrap().keys().cloned().collect()
    }

    /// The agent's background queue.
    pub fn mailbox(&self, agent: &AgentId) -> Result<Arc<Mailbox>, RouterError> {
        self.inner
            .agents
            .read()
            .unwrap()
            .get(agent)
            .map(|e| e.mailbox.clone())
            .ok_or_else(|| RouterError::UnknownAgent(agent.to_string()))
    }

    pub fn subscribe(
        &self,
        agent: &AgentId,
        event_type: &str,
        mode: DeliveryMode,
    ) -> Result<Subscription, RouterError> {
        if !self.inner.agents.read().unwrap().contains_key(agent) {
            return Err(RouterError::UnknownAgent(agent.to_string()));
        }
        if !self.is_event_type(event_type) {
            return Err(RouterError::UnknownEventType(event_type.to_string()));
        }
        let mut subs = self.inner.subscriptions.write().unwrap();
        if subs
            .iter()
            .any(|s| &s.agent == agent && s.event_type == event_type)
        {
            return Err(RouterError::DuplicateSubscription {
                agent: agent.to_string(),
                event_type: event_type.to_string(),
            });
        }
        let sub = Subscription {
            agent: agent.clone(),
            event_type: event_type.to_string(),
            mode,
        };
        subs.push(sub.clone());
        Ok(sub)
    }

    pub fn subscriptions(&self) -> Vec<Subscription> {
        self.inner.subscriptions.read().unwrap().clone()
    }

    pub fn subscribers_of(&self, event_type: &str) -> Vec<Subscription> {
        self.inner
            .subscriptions
            .read()
            .unwrap()
            .iter()
            .filter(|s| s.event_type == event_type)
            .cloned()
            .collect()
    }

    /// New unpublished event stamped with the current time.
    pub fn make_event(&self, event_type: &str, payload: Payload) -> Result<Event, RouterError> {
        if !self.is_event_type(event_type) {
            return Err(RouterError::UnknownEventType(event_type.to_string()));
        }
        for (key, value) in &payload {
            if let Some(reason) = value.invalid_reason() {
                return Err(RouterError::InvalidPayloadValue {
                    key: key.clone(),
                    reason,
                });
            }
        }
        Ok(Event {
            event_type: event_type.to_string(),
            source: AgentId::router(),
            seq: 0,
            timestamp: self.inner.clock.now(),
            payload,
        })
    }

    /// Enqueue `event` from `source` and return its sequence number.
    /// Never blocks on dispatch.
    pub fn send_to_agent(
        &self,
        source: &AgentId,
        target: impl Into<Target>,
        mut event: Event,
    ) -> Result<u64, RouterError> {
        let target = target.into();
        if let Target::Agent(id) = &target {
            if !self.inner.agents.read().unwrap().contains_key(id) {
                return Err(RouterError::UnknownAgent(id.to_string()));
            }
        }
        if !self.is_event_type(&event.event_type) {
            return Err(RouterError::UnknownEventType(event.event_type));
        }
        let mut q = self.inner.queue.lock().unwrap();
        if q.items.len() >= self.inner.config.queue_capacity {
            drop(q);
            self.inner
                .stats
                .lock()
                .unwrap()
                .counters(&event.event_type)
                .rejected += 1;
            return Err(RouterError::QueueFull {
                capacity: self.inner.config.queue_capacity,
            });
        }
        let seq = q.next_seq;
        q.next_seq += 1;
        event.seq = seq;
        event.source = source.clone();
        let event_type = event.event_type.clone();
        q.items.push_back(Queued {
            event: Arc::new(event),
            target,
            enqueued_us: self.inner.clock.now_micros(),
        });
        drop(q);
        self.inner.stats.lock().unwrap().counters(&event_type).published += 1;
        self.inner.queue_ready.notify_one();
        Ok(seq)
    }

    /// Publisher bound to one agent identity.
    pub fn publisher(&self, agent: &AgentId) -> Publisher {
        Publisher {
            router: self.clone(),
            agent: agent.clone(),
        }
    }

    pub fn pending(&self) -> usize {
        self.inner.queue.lock().unwrap().items.len()
    }

    /// Dispatch until the queue is empty, including events enqueued by
    /// handlers along the way. Returns the number of events dispatched.
    pub fn dispatch_pending(&self) -> usize {
        let mut n = 0;
        while let Some(item) = self.pop() {
            self.dispatch(item);
            n += 1;
        }
        n
    }

    /// Dispatch loop. Returns once `stop` is set and the queue is drained.
    pub fn run_dispatch(&self, stop: &StopSignal) -> RouterStats {
        loop {
            if let Some(item) = self.pop() {
                self.dispatch(item);
                continue;
            }
            if stop.is_stopped() {
                break;
            }
            let q = self.inner.queue.lock().unwrap();
            let _ = self
                .inner
                .queue_ready
                .wait_timeout_while(q, Duration::from_millis(5), |q| q.items.is_empty())
                .unwrap();
        }
        self.stats()
    }

    /// Wake a dispatch loop blocked on an empty queue.
    pub fn notify(&self) {
        self.inner.queue_ready.notify_all();
    }

    pub fn stats(&self) -> RouterStats {
        self.inner.stats.lock().unwrap().clone()
    }

    fn pop(&self) -> Option<Queued> {
        self.inner.queue.lock().unwrap().items.pop_front()
    }

    fn dispatch(&self, item: Queued) {
        let _serial = self.inner.dispatch_lock.lock().unwrap();
        let _ctx = DispatchGuard::enter();
        let clock = &self.inner.clock;
        let start_us = clock.now_micros();
        let event = item.event;

        for obs in self.inner.observers.read().unwrap().iter() {
            obs(&event);
        }

        let routes: Vec<(AgentId, DeliveryMode)> = match &item.target {
            Target::Router => self
                .subscribers_of(&event.event_type)
                .into_iter()
                .map(|s| (s.agent, s.mode))
                .collect(),
            Target::Agent(id) => {
                let mode = self
                    .inner
                    .subscriptions
                    .read()
                    .unwrap()
                    .iter()
                    .find(|s| &s.agent == id && s.event_type == event.event_type)
                    .map_or(DeliveryMode::Inline, |s| s.mode);
                vec![(id.clone(), mode)]
            }
        };

        let mut outcome = DeliveryOutcome::Delivered;
        let mut record = RouteTally::default();
        for (agent, mode) in &routes {
            let (handler, mailbox) = match self.inner.agents.read().unwrap().get(agent) {
                Some(e) => (e.handler.clone(), e.mailbox.clone()),
                None => continue,
            };
            match mode {
                DeliveryMode::Inline => {
                    let res = catch_unwind(AssertUnwindSafe(|| handler.handle(&event)));
                    let err = match res {
                        Ok(Ok(())) => None,
                        Ok(Err(e)) => Some(e.0),
                        Err(panic) => Some(panic_message(panic)),
                    };
                    match err {
                        None => record.delivered.push(agent.clone()),
                        Some(msg) => {
                            log::warn!(
                                "handler {} failed on {} seq={}: {}",
                                agent,
                                event.event_type,
                                event.seq,
                                msg
                            );
                            record.errors += 1;
                            outcome = DeliveryOutcome::HandlerError;
                        }
                    }
                }
                DeliveryMode::Background => match mailbox.push(event.clone()) {
                    PushOutcome::Accepted => record.delivered.push(agent.clone()),
                    PushOutcome::Evicted(old) => {
                        record.delivered.push(agent.clone());
                        record.dropped.push(old.event_type.clone());
                        handler.on_dropped(&old);
                        if outcome == DeliveryOutcome::Delivered {
                            outcome = DeliveryOutcome::Dropped;
                        }
                    }
                    PushOutcome::Closed(ev) => {
                        record.dropped.push(ev.event_type.clone());
                        handler.on_dropped(&ev);
                        if outcome == DeliveryOutcome::Delivered {
                            outcome = DeliveryOutcome::Dropped;
                        }
                    }
                },
            }
        }

        let latency_us = clock.now_micros().saturating_sub(start_us);
        {
            let mut stats = self.inner.stats.lock().unwrap();
            let c = stats.counters(&event.event_type);
            c.delivered += record.delivered.len() as u64;
            c.handler_errors += record.errors;
            if routes.is_empty() {
                c.unrouted += 1;
            }
            for t in &record.dropped {
                stats.counters(t).dropped += 1;
            }
            for agent in record.delivered {
                *stats
                    .delivered_to
                    .entry((agent.to_string(), event.event_type.clone()))
                    .or_default() += 1;
            }
            stats.handler_errors += record.errors;
            stats.dispatch_latency_us.push(latency_us);
            stats.queue_wait_us.push(start_us.saturating_sub(item.enqueued_us));
        }

        if let Some(sink) = self.inner.log.lock().unwrap().as_mut() {
            let line = log_line(
                Timestamp(start_us / 1000),
                &event,
                latency_us,
                outcome,
            );
            let _ = writeln!(sink, "{line}");
        }
    }
}

#[derive(Default)]
struct RouteTally {
    delivered: Vec<AgentId>,
    dropped: Vec<String>,
    errors: u64,
}

fn panic_message(panic: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = panic.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".to_string()
    }
}

/// `ts=<ISO8601> seq=<n> type=<t> source=<agent> latency_us=<n> outcome=<o>`
pub fn log_line(ts: Timestamp, event: &Event, latency_us: u64, outcome: DeliveryOutcome) -> String {
    format!(
        "ts={} seq={} type={} source={} latency_us={} outcome={}",
        ts.to_iso8601(),
        event.seq,
        event.event_type,
        event.source,
        latency_us,
        outcome
    )
}

/// Event factory and sender bound to one agent.
#[derive(Clone)]
pub struct Publisher {
    router: Router,
    agent: AgentId,
}

impl Publisher {
    pub fn agent(&self) -> &AgentId {
        &self.agent
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn make_event(&self, event_type: &str, payload: Payload) -> Result<Event, RouterError> {
        let mut ev = self.router.make_event(event_type, payload)?;
        ev.source = self.agent.clone();
        Ok(ev)
    }

    pub fn send_to_agent(&self, target: impl Into<Target>, event: Event) -> Result<u64, RouterError> {
        self.router.send_to_agent(&self.agent, target, event)
    }

    /// `make_event` then publish to every subscriber.
    pub fn publish(&self, event_type: &str, payload: Payload) -> Result<u64, RouterError> {
        let ev = self.make_event(event_type, payload)?;
        self.send_to_agent(Target::Router, ev)
    }
}

#[cfg(test)]
mod tests;
