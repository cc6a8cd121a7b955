use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use super::backend::{DetectorBackend, Frame};
use super::snapshot::SnapshotStore;
use super::tracker::evaluate_triggers;
use crate::channel::command::ConfigUpdate;
use crate::clock::Clock;
use crate::metrics::MetricsSink;
use crate::reporting::ConfigArgs;
use crate::router::{
    payload, Event, Handler, HandlerError, PayloadValue, Publisher, COMMAND, SHUTDOWN, SNAPSHOT,
};
use crate::{TrackerConfig, TrackerState};

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct VisionSettings {
    pub frame_rate: f64,
    pub width: u32,
    pub height: u32,
    /// Detections below this confidence are discarded before tracking.
    pub conf_threshold: f64,
    pub preview: bool,
    pub tracker: TrackerConfig,
}

impl Default for VisionSettings {
    fn default() -> Self {
        VisionSettings {
            frame_rate: 10.0,
            width: 640,
            height: 480,
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            preview: false,
            tracker: TrackerConfig::default(),
        }
    }
}

impl VisionSettings {
    pub fn frame_interval(&self) -> Duration {
        Duration::from_micros((1_000_000.0 / self.frame_rate).round() as u64)
    }

    pub fn apply(&mut self, u: &ConfigUpdate) {
        if let Some(l) = &u.labels {
            self.tracker.target_labels = l.clone();
        }
        if let Some((w, h)) = u.resolution {
            self.width = w;
            self.height = h;
        }
        if let Some(t) = u.theta {
            self.tracker.theta = t;
        }
        if let Some(c) = u.conf {
            self.conf_threshold = c;
        }
        if let Some(d) = u.dwell {
            self.tracker.dwell = d;
        }
        if let Some(c) = u.cooldown {
            self.tracker.cooldown = c;
        }
        if let Some(p) = u.preview {
            self.preview = p;
        }
    }
}

struct FrameLoop {
    tracker: TrackerState,
    settings: VisionSettings,
    next_index: u64,
}

/// Detect, track, trigger and publish snapshots, one frame at a time.
pub struct VisionAgent {
    clock: Arc<dyn Clock>,
    publisher: OnceLock<Publisher>,
    backend: Mutex<Box<dyn DetectorBackend>>,
    descriptor: String,
    state: Mutex<FrameLoop>,
    pending: Mutex<Vec<ConfigUpdate>>,
    running: AtomicBool,
    store: SnapshotStore,
    metrics: MetricsSink,
}

impl VisionAgent {
    pub fn new(
        backend: Box<dyn DetectorBackend>,
        settings: VisionSettings,
        store: SnapshotStore,
        clock: Arc<dyn Clock>,
        metrics: MetricsSink,
    ) -> Self {
        let descriptor = backend.descriptor();
        VisionAgent {
            clock,
            publisher: OnceLock::new(),
            backend: Mutex::new(backend),
            descriptor,
            state: Mutex::new(FrameLoop {
                tracker: TrackerState::new(),
                settings,
                next_index: 0,
            }),
            pending: Mutex::new(Vec::new()),
            running: AtomicBool::new(false),
            store,
            metrics,
        }
    }

    /// Bind the router identity used for publishing. First call wins.
    pub fn attach(&self, publisher: Publisher) {
        let _ = self.publisher.set(publisher);
    }

    pub fn start(&self) {
        self.running.store(true, Ordering::Release);
    }

    pub fn stop(&self) {
        self.running.store(false, Ordering::Release);
    }

    pub fn is_running(&self) -> bool {
        self.running.load(Ordering::Acquire)
    }

    pub fn settings(&self) -> VisionSettings {
        self.state.lock().unwrap().settings.clone()
    }

    pub fn tracker(&self) -> TrackerState {
        self.state.lock().unwrap().tracker.clone()
    }

    pub fn store(&self) -> &SnapshotStore {
        &self.store
    }

    /// Queue a configuration change; applied before the next frame.
    pub fn enqueue_update(&self, update: ConfigUpdate) {
        self.pending.lock().unwrap().push(update);
    }

    /// Configuration snapshot attached to every published event.
    pub fn config_args(&self) -> ConfigArgs {
        args_from(&self.settings(), &self.descriptor)
    }

    /// Next blank frame at the current resolution and time.
    pub fn next_frame(&self) -> Frame {
        let mut st = self.state.lock().unwrap();
        let index = st.next_index;
        st.next_index += 1;
        Frame::blank(index, self.clock.now(), st.settings.width, st.settings.height)
    }

    /// Run one frame through detect, filter, track, trigger. Returns the
    /// number of snapshot events published.
    pub fn process_frame(&self, frame: Frame) -> usize {
        let started = self.clock.now_micros();
        let mut st = self.state.lock().unwrap();
        for u in self.pending.lock().unwrap().drain(..) {
            st.settings.apply(&u);
        }

        let raw = match self.backend.lock().unwrap().detect(&frame) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("frame {} skipped: {e}", frame.index);
                self.metrics.record_error("backend");
                return 0;
            }
        };
        let FrameLoop {
            tracker, settings, ..
        } = &mut *st;
        let detections: Vec<_> = raw
            .into_iter()
            .filter(|d| {
                d.confidence >= settings.conf_threshold
                    && settings.tracker.target_labels.contains(&d.label)
            })
            .collect();
        tracker.update(&detections, &settings.tracker, frame.timestamp);
        let fired = evaluate_triggers(tracker, &settings.tracker, frame.timestamp);

        let mut emitted = 0;
        if !fired.is_empty() {
            let args = args_from(settings, &self.descriptor);
            for id in fired {
                self.metrics.record_trigger();
                let path = match self.store.save(&frame, &detections, tracker, id) {
                    Ok(p) => p,
                    Err(e) => {
                        log::warn!("snapshot for track {id} not written: {e}");
                        self.metrics.record_error("snapshot_write");
                        continue;
                    }
                };
                let body = payload([
                    ("path", PayloadValue::Path(path)),
                    ("detections", PayloadValue::Detections(detections.clone())),
                    (
                        "timestamp",
                        PayloadValue::Integer(frame.timestamp.as_millis() as i64),
                    ),
                    ("args", PayloadValue::Config(args.clone())),
                ]);
                match self.publisher.get().map(|p| p.publish(SNAPSHOT, body)) {
                    Some(Ok(_)) => {
                        self.metrics.record_snapshot_published();
                        emitted += 1;
                    }
                    Some(Err(e)) => {
                        log::warn!("snapshot event not published: {e}");
                        self.metrics.record_error("publish");
                    }
                    None => self.metrics.record_error("unattached"),
                }
            }
        }
        drop(st);
        let elapsed = self.clock.now_micros().saturating_sub(started);
        self.metrics.record_frame(frame.timestamp, elapsed);
        emitted
    }

    /// Frame loop for live runs; paces itself to the configured frame rate.
    pub fn run_loop(&self, stop: &crate::router::StopSignal) {
        while !stop.is_stopped() {
            if !self.is_running() {
                self.clock.sleep(Duration::from_millis(20));
                continue;
            }
            let t0 = self.clock.now_micros();
            let frame = self.next_frame();
            self.process_frame(frame);
            let interval = self.settings().frame_interval();
            let spent = Duration::from_micros(self.clock.now_micros().saturating_sub(t0));
            if spent < interval {
                self.clock.sleep(interval - spent);
            }
        }
    }
}

fn args_from(s: &VisionSettings, detector: &str) -> ConfigArgs {
    ConfigArgs::new()
        .with(
            "labels",
            s.tracker.target_labels.iter().cloned().collect::<Vec<_>>(),
        )
        .with("resolution", format!("{}x{}", s.width, s.height))
        .with("theta", s.tracker.theta)
        .with("conf", s.conf_threshold)
        .with("dwell_s", s.tracker.dwell.as_secs_f64())
        .with("cooldown_s", s.tracker.cooldown.as_secs_f64())
        .with("detector", detector)
}

/// Command parameters carried as text entries beside `action`.
pub(crate) fn command_params(event: &Event) -> BTreeMap<String, String> {
    event
        .payload
        .iter()
        .filter(|(k, _)| k.as_str() != "action")
        .filter_map(|(k, v)| match v {
            PayloadValue::Text(t) => Some((k.clone(), t.clone())),
            _ => None,
        })
        .collect()
}

impl Handler for VisionAgent {
    fn handle(&self, event: &Event) -> Result<(), HandlerError> {
        match event.event_type.as_str() {
            COMMAND => match event.text("action") {
                Some("start") => self.start(),
                Some("stop") => self.stop(),
                Some("configure") => {
                    let update = ConfigUpdate::from_params(&command_params(event))
                        .map_err(|e| HandlerError::new(e.to_string()))?;
                    self.enqueue_update(update);
                }
                Some(_) => {}
                None => return Err(HandlerError::new("command without action")),
            },
            SHUTDOWN => self.stop(),
            _ => {}
        }
        Ok(())
    }
}
