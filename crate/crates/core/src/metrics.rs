//! Run metrics: a shared recorder agents append to, and the final report
//! with its line-delimited `key=value` rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use crate::clock::Timestamp;
use crate::reporting::{OutcomeKind, ReportOutcome};
use crate::router::{RouterStats, TypeCounters, EVENT_TYPES};

/// Nearest-rank quantile of `samples`; 0 for an empty set.
pub fn quantile(samples: &[u64], q: f64) -> u64 {
    if samples.is_empty() {
        return 0;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostKind {
    Posted,
    Fallback,
    SendFailed,
}

#[derive(Debug, Clone, Default)]
pub struct Recorder {
    pub frames_processed: u64,
    pub first_frame: Option<Timestamp>,
    pub last_frame: Option<Timestamp>,
    pub frame_time_us: Vec<u64>,
    pub triggers: u64,
    pub snapshots_published: u64,
    pub outcomes: Vec<ReportOutcome>,
    pub reports_published: u64,
    pub posted: u64,
    pub fallback: u64,
    pub send_failed: u64,
    pub commands: u64,
    pub replies: u64,
    pub reply_latency_ms: Vec<u64>,
    pub errors: BTreeMap<String, u64>,
}

impl Recorder {
    pub fn outcome_count(&self, kind: OutcomeKind) -> u64 {
        self.outcomes.iter().filter(|o| o.outcome == kind).count() as u64
    }

    /// Frames per second over the span between the first and last frame.
    pub fn achieved_fps(&self) -> f64 {
        match (self.first_frame, self.last_frame) {
            (Some(a), Some(b)) if self.frames_processed > 1 && b > a => {
                (self.frames_processed - 1) as f64 / (b.since(a).as_secs_f64())
            }
            _ => 0.0,
        }
    }
}

/// Concurrent-append metrics recorder shared by every agent.
#[derive(Debug, Clone, Default)]
pub struct MetricsSink(Arc<Mutex<Recorder>>);

impl MetricsSink {
    pub fn new() -> Self {
        Self::default()
    }

    fn with<R>(&self, f: impl FnOnce(&mut Recorder) -> R) -> R {
        f(&mut self.0.lock().unwrap())
    }

    pub fn snapshot(&self) -> Recorder {
        self.with(|r| r.clone())
    }

    pub fn record_frame(&self, ts: Timestamp, processing_us: u64) {
        self.with(|r| {
            r.frames_processed += 1;
            r.first_frame.get_or_insert(ts);
            r.last_frame = Some(ts);
            r.frame_time_us.push(processing_us);
        })
    }

    pub fn record_trigger(&self) {
        self.with(|r| r.triggers += 1)
    }

    pub fn record_snapshot_published(&self) {
        self.with(|r| r.snapshots_published += 1)
    }

    pub fn record_outcome(&self, outcome: ReportOutcome) {
        self.with(|r| r.outcomes.push(outcome))
    }

    pub fn record_report_published(&self) {
        self.with(|r| r.reports_published += 1)
    }

    pub fn record_post(&self, kind: PostKind) {
        self.with(|r| match kind {
            PostKind::Posted => r.posted += 1,
            PostKind::Fallback => r.fallback += 1,
            PostKind::SendFailed => r.send_failed += 1,
        })
    }

    pub fn record_command(&self) {
        self.with(|r| r.commands += 1)
    }

    pub fn record_reply(&self, latency_ms: u64) {
        self.with(|r| {
            r.replies += 1;
            r.reply_latency_ms.push(latency_ms);
        })
    }

    pub fn record_error(&self, kind: &str) {
        self.with(|r| *r.errors.entry(kind.to_string()).or_default() += 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Int(u64),
    Real(f64),
}

impl MetricValue {
    pub fn as_f64(self) -> f64 {
        match self {
            MetricValue::Int(v) => v as f64,
            MetricValue::Real(v) => v,
        }
    }
}

impl std::fmt::Display for MetricValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricValue::Int(v) => write!(f, "{v}"),
            MetricValue::Real(v) => write!(f, "{v:.3}"),
        }
    }
}

/// Final metrics of one run.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub mode: String,
    pub outcomes: Vec<ReportOutcome>,
    summary: Vec<(String, MetricValue)>,
}

impl Metrics {
    pub fn collect(mode: &str, rec: &Recorder, router: &RouterStats) -> Metrics {
        use MetricValue::{Int, Real};
        let mut s: Vec<(String, MetricValue)> = Vec::new();
        let mut put = |k: &str, v: MetricValue| s.push((k.to_string(), v));

        put("frames_processed", Int(rec.frames_processed));
        put("vision.achieved_fps", Real(rec.achieved_fps()));
        let mean_us = if rec.frame_time_us.is_empty() {
            0.0
        } else {
            rec.frame_time_us.iter().sum::<u64>() as f64 / rec.frame_time_us.len() as f64
        };
        put("vision.frame_time_ms.mean", Real(mean_us / 1000.0));
        put("vision.triggers", Int(rec.triggers));
        put("vision.snapshots_published", Int(rec.snapshots_published));

        for t in EVENT_TYPES {
            let c: TypeCounters = router.get(t);
            put(&format!("events.{t}.published"), Int(c.published));
            put(&format!("events.{t}.rejected"), Int(c.rejected));
            put(&format!("events.{t}.delivered"), Int(c.delivered));
            put(&format!("events.{t}.dropped"), Int(c.dropped));
            put(&format!("events.{t}.handler_errors"), Int(c.handler_errors));
            put(&format!("events.{t}.unrouted"), Int(c.unrouted));
        }

        put("reports.consumed", Int(rec.outcomes.len() as u64));
        for k in OutcomeKind::ALL {
            put(&format!("reports.{k}"), Int(rec.outcome_count(k)));
        }
        let lat: Vec<u64> = rec
            .outcomes
            .iter()
            .filter(|o| o.outcome == OutcomeKind::Delivered)
            .map(|o| o.latency_ms)
            .collect();
        put("reports.latency_ms.p50", Int(quantile(&lat, 0.5)));
        put("reports.latency_ms.p95", Int(quantile(&lat, 0.95)));
        put("reports.latency_ms.max", Int(lat.iter().copied().max().unwrap_or(0)));
        put("reports.published", Int(rec.reports_published));

        put("channel.posted", Int(rec.posted));
        put("channel.fallback", Int(rec.fallback));
        put("channel.send_failed", Int(rec.send_failed));

        put("control.commands", Int(rec.commands));
        put("control.replies", Int(rec.replies));
        put(
            "control.reply_latency_ms.max",
            Int(rec.reply_latency_ms.iter().copied().max().unwrap_or(0)),
        );

        let d = &router.dispatch_latency_us;
        put("dispatch.latency_us.p50", Int(quantile(d, 0.5)));
        put("dispatch.latency_us.p95", Int(quantile(d, 0.95)));
        put("dispatch.latency_us.max", Int(d.iter().copied().max().unwrap_or(0)));
        put("dispatch.handler_errors", Int(router.handler_errors));

        let total: u64 = rec.errors.values().sum();
        put("errors.total", Int(total));
        for (k, v) in &rec.errors {
            put(&format!("errors.{k}"), Int(*v));
        }

        Metrics {
            mode: mode.to_string(),
            outcomes: rec.outcomes.clone(),
            summary: s,
        }
    }

    pub fn get(&self, key: &str) -> Option<MetricValue> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// Integer value of `key`, or 0 when absent (error kinds never seen).
    pub fn count(&self, key: &str) -> u64 {
        self.get(key).map_or(0, |v| v.as_f64() as u64)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.summary.iter().map(|(k, _)| k.as_str())
    }

    /// One `report` record per outcome, then the `[summary]` block.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# watchpost metrics v1 mode={}", self.mode);
        for o in &self.outcomes {
            let _ = writeln!(
                out,
                "report seq={} outcome={} latency_ms={}",
                o.snapshot_seq, o.outcome, o.latency_ms
            );
        }
        out.push_str("[summary]\n");
        for (k, v) in &self.summary {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}
