use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::args::{format_args, ConfigArgs};
use super::llm::{CaptionError, LlmClient, LlmRequest, DEFAULT_MODEL};
use super::outcome::{OutcomeKind, ReportOutcome};
use super::prompt::{build_prompt, cap_prompt, DEFAULT_PROMPT_CAP};
use crate::clock::{Clock, Timestamp};
use crate::metrics::MetricsSink;
use crate::router::{
    in_dispatch_context, payload, Event, Handler, HandlerError, Mailbox, PayloadValue, Publisher,
    StopSignal, COMMAND, REPORT, SHUTDOWN, SNAPSHOT,
};
use crate::Detection;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportingSettings {
    pub model: String,
    /// Bound on one report, retries included.
    pub deadline: Duration,
    pub max_in_flight: usize,
    /// Snapshots waiting for a free slot; the oldest is dropped beyond this.
    pub queue_cap: usize,
    pub prompt_cap: usize,
    pub retry_backoff: Duration,
}

impl Default for ReportingSettings {
    fn default() -> Self {
        ReportingSettings {
            model: DEFAULT_MODEL.to_string(),
            deadline: Duration::from_secs(60),
            max_in_flight: 1,
            queue_cap: 4,
            prompt_cap: DEFAULT_PROMPT_CAP,
            retry_backoff: Duration::from_secs(1),
        }
    }
}

/// Result of [`generate_caption`] with the work it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Captioned {
    pub result: Result<String, CaptionError>,
    pub attempts: u32,
    /// Service time from the client's latency model, when it has one.
    pub modelled: Option<Duration>,
}

/// Build the prompt, call the model, and retry once if it was unreachable.
#[allow(clippy::too_many_arguments)]
pub fn generate_caption(
    path: &Path,
    detections: &[Detection],
    timestamp: Timestamp,
    args_str: &str,
    client: &dyn LlmClient,
    settings: &ReportingSettings,
    clock: &dyn Clock,
) -> Captioned {
    let prompt = cap_prompt(
        build_prompt(path, detections, timestamp, args_str),
        settings.prompt_cap,
    );
    let req = LlmRequest::new(settings.model.clone(), prompt);
    let started = Instant::now();
    let mut modelled = client.modelled_latency(&req).map(|_| Duration::ZERO);
    let mut attempts = 0;
    loop {
        let spent = modelled.unwrap_or_else(|| started.elapsed());
        let remaining = settings.deadline.saturating_sub(spent);
        if remaining.is_zero() {
            return Captioned {
                result: Err(CaptionError::Timeout),
                attempts,
                modelled,
            };
        }
        attempts += 1;
        let result = client.generate(&req, remaining);
        if let (Some(m), Some(lat)) = (modelled.as_mut(), client.modelled_latency(&req)) {
            *m += lat.min(remaining);
        }
        match result {
            Err(CaptionError::LlmUnavailable(_)) if attempts == 1 => {
                clock.sleep(settings.retry_backoff);
                if let Some(m) = modelled.as_mut() {
                    *m += settings.retry_backoff;
                }
            }
            Ok(c) if c.trim().is_empty() => {
                return Captioned {
                    result: Err(CaptionError::EmptyCaption),
                    attempts,
                    modelled,
                }
            }
            result => {
                return Captioned {
                    result,
                    attempts,
                    modelled,
                }
            }
        }
    }
}

/// One consumed snapshot event.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotJob {
    pub snapshot_seq: u64,
    /// When the snapshot event was published.
    pub published: Timestamp,
    pub path: PathBuf,
    pub detections: Vec<Detection>,
    pub timestamp: Timestamp,
    pub args: ConfigArgs,
}

impl SnapshotJob {
    pub fn from_event(event: &Event) -> Result<Self, String> {
        let path = event.path("path").ok_or("snapshot without path")?;
        let detections = event.detections("detections").ok_or("snapshot without detections")?;
        let ts = event.integer("timestamp").ok_or("snapshot without timestamp")?;
        Ok(SnapshotJob {
            snapshot_seq: event.seq,
            published: event.timestamp,
            path: path.to_path_buf(),
            detections: detections.to_vec(),
            timestamp: Timestamp(ts.max(0) as u64),
            args: event.config("args").cloned().unwrap_or_default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobResult {
    pub caption: Result<String, CaptionError>,
    pub attempts: u32,
    /// Time the job occupied its slot.
    pub service: Duration,
}

/// Turns snapshot events into captioned reports off the dispatch path.
///
/// Snapshots arrive through the agent's mailbox (a background
/// subscription), which doubles as the bounded pending queue. Jobs run on
/// worker threads in live mode, or are stepped by the scenario driver.
pub struct ReportingAgent {
    settings: Mutex<ReportingSettings>,
    client: Arc<dyn LlmClient>,
    clock: Arc<dyn Clock>,
    metrics: MetricsSink,
    publisher: OnceLock<Publisher>,
    mailbox: OnceLock<Arc<Mailbox>>,
    in_flight: AtomicUsize,
    dispatch_violations: AtomicU64,
    shut_down: AtomicBool,
}

impl ReportingAgent {
    pub fn new(
        client: Arc<dyn LlmClient>,
        settings: ReportingSettings,
        clock: Arc<dyn Clock>,
        metrics: MetricsSink,
    ) -> Self {
        ReportingAgent {
            settings: Mutex::new(settings),
            client,
            clock,
            metrics,
            publisher: OnceLock::new(),
            mailbox: OnceLock::new(),
            in_flight: AtomicUsize::new(0),
            dispatch_violations: AtomicU64::new(0),
            shut_down: AtomicBool::new(false),
        }
    }

    pub fn attach(&self, publisher: Publisher) {
        if let Ok(mb) = publisher.router().mailbox(publisher.agent()) {
            let _ = self.mailbox.set(mb);
        }
        let _ = self.publisher.set(publisher);
    }

    pub fn settings(&self) -> ReportingSettings {
        self.settings.lock().unwrap().clone()
    }

    pub fn client_descriptor(&self) -> String {
        self.client.descriptor()
    }

    /// Snapshots waiting for a slot.
    pub fn pending(&self) -> usize {
        self.mailbox.get().map_or(0, |m| m.len())
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::Acquire)
    }

    /// Jobs that were started on the router's dispatch thread. Always 0
    /// unless the agent is misused.
    pub fn dispatch_violations(&self) -> u64 {
        self.dispatch_violations.load(Ordering::Relaxed)
    }

    /// Claim the next pending snapshot if a slot is free.
    pub fn take_job(&self) -> Option<SnapshotJob> {
        let max = self.settings.lock().unwrap().max_in_flight.max(1);
        let mb = self.mailbox.get()?;
        loop {
            if self.in_flight.load(Ordering::Acquire) >= max {
                return None;
            }
            let event = mb.try_pop()?;
            if let Some(job) = self.accept(&event) {
                return Some(job);
            }
        }
    }

    fn accept(&self, event: &Event) -> Option<SnapshotJob> {
        match SnapshotJob::from_event(event) {
            Ok(job) => {
                self.in_flight.fetch_add(1, Ordering::AcqRel);
                Some(job)
            }
            Err(reason) => {
                log::warn!("snapshot seq={} unusable: {reason}", event.seq);
                self.metrics.record_error("bad_snapshot");
                self.record(event.seq, event.timestamp, OutcomeKind::LlmError);
                None
            }
        }
    }

    /// Generate the caption for `job`. Blocks for the model's latency.
    pub fn run_job(&self, job: &SnapshotJob) -> JobResult {
        if in_dispatch_context() {
            self.dispatch_violations.fetch_add(1, Ordering::Relaxed);
            log::error!("caption generation started on the dispatch thread");
        }
        let settings = self.settings();
        let started = Instant::now();
        let c = generate_caption(
            &job.path,
            &job.detections,
            job.timestamp,
            &format_args(&job.args),
            self.client.as_ref(),
            &settings,
            self.clock.as_ref(),
        );
        let service = if self.clock.is_simulated() {
            c.modelled.unwrap_or_default()
        } else {
            started.elapsed()
        };
        JobResult {
            caption: c.result,
            attempts: c.attempts,
            service,
        }
    }

    /// Record the job's outcome and publish its report on success.
    pub fn complete(&self, job: SnapshotJob, result: JobResult) -> ReportOutcome {
        self.in_flight.fetch_sub(1, Ordering::AcqRel);
        let kind = match result.caption {
            Ok(caption) => self.publish_report(&job, caption),
            Err(CaptionError::Timeout) => OutcomeKind::Timeout,
            Err(e) => {
                log::warn!("report for snapshot seq={} failed: {e}", job.snapshot_seq);
                OutcomeKind::LlmError
            }
        };
        self.record(job.snapshot_seq, job.published, kind)
    }

    fn publish_report(&self, job: &SnapshotJob, caption: String) -> OutcomeKind {
        let body = payload([
            ("path", PayloadValue::Path(job.path.clone())),
            ("caption", PayloadValue::Text(caption)),
        ]);
        match self.publisher.get().map(|p| p.publish(REPORT, body)) {
            Some(Ok(_)) => {
                self.metrics.record_report_published();
                OutcomeKind::Delivered
            }
            Some(Err(e)) => {
                log::warn!("report not published: {e}");
                self.metrics.record_error("publish");
                OutcomeKind::Dropped
            }
            None => {
                self.metrics.record_error("unattached");
                OutcomeKind::Dropped
            }
        }
    }

    fn record(&self, seq: u64, published: Timestamp, kind: OutcomeKind) -> ReportOutcome {
        let outcome = ReportOutcome {
            snapshot_seq: seq,
            outcome: kind,
            latency_ms: self.clock.now().since(published).as_millis() as u64,
        };
        self.metrics.record_outcome(outcome);
        outcome
    }

    /// Block up to `wait` for a snapshot and process it to completion.
    pub fn process_next(&self, wait: Duration) -> Option<ReportOutcome> {
        let event = self.mailbox.get()?.pop_timeout(wait)?;
        let job = self.accept(&event)?;
        let result = self.run_job(&job);
        Some(self.complete(job, result))
    }

    /// `max_in_flight` worker threads consuming the mailbox until `stop`.
    pub fn spawn_workers(self: &Arc<Self>, stop: &StopSignal) -> Vec<JoinHandle<()>> {
        let n = self.settings().max_in_flight.max(1);
        (0..n)
            .map(|i| {
                let agent = self.clone();
                let stop = stop.clone();
                std::thread::Builder::new()
                    .name(format!("reporting-{i}"))
                    .spawn(move || {
                        while !stop.is_stopped() && !agent.shut_down.load(Ordering::Acquire) {
                            agent.process_next(Duration::from_millis(50));
                        }
                    })
                    .expect("spawn reporting worker")
            })
            .collect()
    }

    /// Stop accepting snapshots; anything still queued is dropped.
    pub fn drain(&self) -> usize {
        self.shut_down.store(true, Ordering::Release);
        let Some(mb) = self.mailbox.get() else {
            return 0;
        };
        let rest = mb.close();
        for ev in &rest {
            self.record(ev.seq, ev.timestamp, OutcomeKind::Dropped);
        }
        rest.len()
    }
}

impl Handler for ReportingAgent {
    fn handle(&self, event: &Event) -> Result<(), HandlerError> {
        match event.event_type.as_str() {
            COMMAND if event.text("action") == Some("configure") => {
                if let Some(model) = event.text("model") {
                    self.settings.lock().unwrap().model = model.to_string();
                }
            }
            SHUTDOWN => self.shut_down.store(true, Ordering::Release),
            _ => {}
        }
        Ok(())
    }

    fn on_dropped(&self, event: &Event) {
        if event.event_type == SNAPSHOT {
            self.record(event.seq, event.timestamp, OutcomeKind::Dropped);
        }
    }
}
