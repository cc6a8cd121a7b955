use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryOutcome {
    Delivered,
    Dropped,
    HandlerError,
}

impl fmt::Display for DeliveryOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeliveryOutcome::Delivered => "delivered",
            DeliveryOutcome::Dropped => "dropped",
            DeliveryOutcome::HandlerError => "handler_error",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeCounters {
    /// Accepted into the router queue.
    pub published: u64,
    /// Refused with `QueueFull`.
    pub rejected: u64,
    /// Handed to a subscriber (inline success or mailbox enqueue).
    pub delivered: u64,
    /// Evicted from, or refused by, a subscriber mailbox.
    pub dropped: u64,
    pub handler_errors: u64,
    /// Dispatched with no subscriber at all.
    pub unrouted: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RouterStats {
    pub per_type: BTreeMap<String, TypeCounters>,
    /// Successful deliveries keyed by `(agent, event_type)`.
    pub delivered_to: BTreeMap<(String, String), u64>,
    pub handler_errors: u64,
    /// Time spent delivering each event, microseconds.
    pub dispatch_latency_us: Vec<u64>,
    /// Time each event waited in the queue before dispatch, microseconds.
    pub queue_wait_us: Vec<u64>,
}

impl RouterStats {
    pub fn counters(&mut self, event_type: &str) -> &mut TypeCounters {
        self.per_type.entry(event_type.to_string()).or_default()
    }

    pub fn get(&self, event_type: &str) -> TypeCounters {
        self.per_type.get(event_type).cloned().unwrap_or_default()
    }

    pub fn delivered_to(&self, agent: &str, event_type: &str) -> u64 {
        self.delivered_to
            .get(&(agent.to_string(), event_type.to_string()))
            .copied()
            .unwrap_or(0)
    }
}
