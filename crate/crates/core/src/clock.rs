//! Wall-clock and simulated time sources.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use chrono::{DateTime, SecondsFormat, Utc};

/// Milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn from_millis(ms: u64) -> Self {
        Timestamp(ms)
    }

    pub fn as_millis(self) -> u64 {
        self.0
    }

    /// Saturating difference `self - earlier`.
    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration::from_millis(self.0.saturating_sub(earlier.0))
    }

    pub fn plus(self, d: Duration) -> Timestamp {
        Timestamp(self.0 + d.as_millis() as u64)
    }

    /// ISO-8601 / RFC 3339 rendering with millisecond precision, UTC.
    pub fn to_iso8601(self) -> String {
        DateTime::<Utc>::from_timestamp_millis(self.0 as i64)
            .unwrap_or_default()
            .to_rfc3339_opts(SecondsFormat::Millis, true)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso8601())
    }
}

/// Source of time for every agent. Scenario runs inject a [`SimClock`].
pub trait Clock: Send + Sync {
    /// Microseconds since the Unix epoch.
    fn now_micros(&self) -> u64;

    fn now(&self) -> Timestamp {
        Timestamp(self.now_micros() / 1000)
    }

    /// Block the caller for `d`. Simulated clocks return immediately.
    fn sleep(&self, d: Duration);

    fn is_simulated(&self) -> bool {
        false
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_micros(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_micros() as u64)
            .unwrap_or(0)
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// 2026-01-01T00:00:00Z, the origin of every simulated run.
pub const SIM_EPOCH: Timestamp = Timestamp(1_767_225_600_000);

/// Manually advanced clock. Time only moves when the owner sets it.
#[derive(Debug, Clone)]
pub struct SimClock {
    micros: Arc<AtomicU64>,
}

impl SimClock {
    pub fn new(start: Timestamp) -> Self {
        SimClock {
            micros: Arc::new(AtomicU64::new(start.0 * 1000)),
        }
    }

    pub fn set(&self, t: Timestamp) {
        self.micros.store(t.0 * 1000, Ordering::Release);
    }

    pub fn set_micros(&self, us: u64) {
        self.micros.store(us, Ordering::Release);
    }

    pub fn advance(&self, d: Duration) {
        self.micros
            .fetch_add(d.as_micros() as u64, Ordering::AcqRel);
    }
}

impl Default for SimClock {
    fn default() -> Self {
        SimClock::new(SIM_EPOCH)
    }
}

impl Clock for SimClock {
    fn now_micros(&self) -> u64 {
        self.micros.load(Ordering::Acquire)
    }

    fn sleep(&self, _d: Duration) {}

    fn is_simulated(&self) -> bool {
        true
    }
}

/// Convert a non-negative seconds value to a whole-millisecond duration.
pub fn secs_to_duration(secs: f64) -> Duration {
    Duration::from_millis((secs.max(0.0) * 1000.0).round() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_clock_moves_only_when_told() {
        let clock = SimClock::default();
        let t0 = clock.now();
        clock.sleep(Duration::from_secs(10));
        assert_eq!(clock.now(), t0);
        clock.advance(Duration::from_millis(1500));
        assert_eq!(clock.now().since(t0), Duration::from_millis(1500));
    }

    #[test]
    fn iso_rendering() {
        assert_eq!(SIM_EPOCH.to_iso8601(), "2026-01-01T00:00:00.000Z");
        assert_eq!(
            SIM_EPOCH.plus(Duration::from_millis(61_250)).to_iso8601(),
            "2026-01-01T00:01:01.250Z"
        );
    }

    #[test]
    fn seconds_round_to_millis() {
        assert_eq!(secs_to_duration(64.9), Duration::from_millis(64_900));
        assert_eq!(secs_to_duration(-1.0), Duration::ZERO);
    }
}
