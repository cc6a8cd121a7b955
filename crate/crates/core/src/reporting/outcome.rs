use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutcomeKind {
    Delivered,
    Timeout,
    Dropped,
    LlmError,
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 4] = [
        OutcomeKind::Delivered,
        OutcomeKind::Timeout,
        OutcomeKind::Dropped,
        OutcomeKind::LlmError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::Delivered => "delivered",
            OutcomeKind::Timeout => "timeout",
            OutcomeKind::Dropped => "dropped",
            OutcomeKind::LlmError => "llm_error",
        }
    }
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Final fate of one consumed snapshot event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOutcome {
    pub snapshot_seq: u64,
    pub outcome: OutcomeKind,
    /// From the snapshot's timestamp to the outcome.
    pub latency_ms: u64,
}
