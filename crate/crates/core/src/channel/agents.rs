use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread::JoinHandle;
use std::time::Duration;

use super::command::{parse_command, Command, ConfigUpdate};
use super::{ChannelAdapter, ChannelMessage};
use crate::clock::{Clock, Timestamp};
use crate::metrics::{MetricsSink, PostKind};
use crate::reporting::{summarize, OutcomeKind};
use crate::router::{
    payload, Event, Handler, HandlerError, Mailbox, Payload, PayloadValue, Publisher, StopSignal,
    COMMAND, REPORT, SNAPSHOT,
};

pub const HELP_TEXT: &str = "commands: start | stop | status | help | \
configure key=value ... (keys: labels, resolution, theta, conf, dwell, cooldown, preview, model)";

pub const SNAPSHOT_UNAVAILABLE: &str = "[snapshot unavailable]";

/// Posts reports (and, when enabled, bare snapshots) to the channel.
pub struct CommunicationAgent {
    adapter: Arc<dyn ChannelAdapter>,
    channel: String,
    snapshot_dir: PathBuf,
    clock: Arc<dyn Clock>,
    metrics: MetricsSink,
    mailbox: OnceLock<Arc<Mailbox>>,
}

impl CommunicationAgent {
    pub fn new(
        adapter: Arc<dyn ChannelAdapter>,
        channel: impl Into<String>,
        snapshot_dir: impl Into<PathBuf>,
        clock: Arc<dyn Clock>,
        metrics: MetricsSink,
    ) -> Self {
        CommunicationAgent {
            adapter,
            channel: channel.into(),
            snapshot_dir: snapshot_dir.into(),
            clock,
            metrics,
            mailbox: OnceLock::new(),
        }
    }

    pub fn attach(&self, publisher: &Publisher) {
        if let Ok(mb) = publisher.router().mailbox(publisher.agent()) {
            let _ = self.mailbox.set(mb);
        }
    }

    /// Post one report or snapshot event.
    pub fn deliver(&self, event: &Event) -> Option<PostKind> {
        let (text, rel) = match event.event_type.as_str() {
            REPORT => (event.text("caption")?.to_string(), event.path("path")?),
            SNAPSHOT => {
                let dets = event.detections("detections").unwrap_or_default();
                let ts = Timestamp(event.integer("timestamp").unwrap_or(0).max(0) as u64);
                (
                    format!("Detected {} at {}", summarize(dets), ts.to_iso8601()),
                    event.path("path")?,
                )
            }
            _ => return None,
        };
        let abs = self.snapshot_dir.join(rel);
        let mut msg = ChannelMessage::text(self.channel.clone(), text, self.clock.now());
        let fallback = !is_readable(&abs);
        if fallback {
            msg.text = format!("{} {SNAPSHOT_UNAVAILABLE}", msg.text);
        } else {
            msg.attachment = Some(abs);
        }
        let sent = self.adapter.post(&msg).or_else(|e| {
            log::warn!("post failed ({e}); retrying once");
            self.adapter.post(&msg)
        });
        let kind = match sent {
            Ok(_) if fallback => PostKind::Fallback,
            Ok(_) => PostKind::Posted,
            Err(e) => {
                log::error!("post for seq={} failed: {e}", event.seq);
                self.metrics.record_error("channel_send");
                PostKind::SendFailed
            }
        };
        self.metrics.record_post(kind);
        Some(kind)
    }

    /// Post everything queued in the mailbox. Returns the number handled.
    pub fn process_pending(&self) -> usize {
        let Some(mb) = self.mailbox.get() else {
            return 0;
        };
        let mut n = 0;
        while let Some(ev) = mb.try_pop() {
            self.deliver(&ev);
            n += 1;
        }
        n
    }

    pub fn spawn_worker(self: &Arc<Self>, stop: &StopSignal) -> Option<JoinHandle<()>> {
        let mb = self.mailbox.get()?.clone();
        let agent = self.clone();
        let stop = stop.clone();
        let handle = std::thread::Builder::new()
            .name("communication".into())
            .spawn(move || loop {
                match mb.pop_timeout(Duration::from_millis(50)) {
                    Some(ev) => {
                        agent.deliver(&ev);
                    }
                    None if stop.is_stopped() => break,
                    None => {}
                }
            })
            .expect("spawn communication worker");
        Some(handle)
    }
}

fn is_readable(path: &Path) -> bool {
    std::fs::File::open(path).is_ok_and(|f| f.metadata().is_ok_and(|m| m.is_file()))
}

impl Handler for CommunicationAgent {
    fn handle(&self, event: &Event) -> Result<(), HandlerError> {
        self.deliver(event);
        Ok(())
    }

    fn on_dropped(&self, event: &Event) {
        log::warn!("{} seq={} dropped before posting", event.event_type, event.seq);
        self.metrics.record_error("post_dropped");
    }
}

/// Live state shown in `status` replies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatusView {
    pub running: bool,
    pub pending_reports: usize,
    pub in_flight: usize,
}

type StatusProbe = Arc<dyn Fn() -> StatusView + Send + Sync>;

/// Turns operator messages into command events and replies.
pub struct ControlAgent {
    adapter: Arc<dyn ChannelAdapter>,
    clock: Arc<dyn Clock>,
    metrics: MetricsSink,
    publisher: OnceLock<Publisher>,
    probe: Mutex<Option<StatusProbe>>,
}

impl ControlAgent {
    pub fn new(adapter: Arc<dyn ChannelAdapter>, clock: Arc<dyn Clock>, metrics: MetricsSink) -> Self {
        ControlAgent {
            adapter,
            clock,
            metrics,
            publisher: OnceLock::new(),
            probe: Mutex::new(None),
        }
    }

    pub fn attach(&self, publisher: Publisher) {
        let _ = self.publisher.set(publisher);
    }

    pub fn set_status_probe(&self, probe: impl Fn() -> StatusView + Send + Sync + 'static) {
        *self.probe.lock().unwrap() = Some(Arc::new(probe));
    }

    fn publish(&self, body: Payload) -> Result<u64, String> {
        let p = self.publisher.get().ok_or("control agent not attached")?;
        p.publish(COMMAND, body).map_err(|e| e.to_string())
    }

    /// Reply text for one operator message, publishing any command event.
    pub fn reply_for(&self, text: &str) -> String {
        let cmd = parse_command(text);
        self.metrics.record_command();
        let action = |a: &str| payload([("action", a)]);
        match cmd {
            Command::Start => match self.publish(action("start")) {
                Ok(_) => "vision agent started".into(),
                Err(e) => format!("error: start not delivered ({e})"),
            },
            Command::Stop => match self.publish(action("stop")) {
                Ok(_) => "vision agent stopped".into(),
                Err(e) => format!("error: stop not delivered ({e})"),
            },
            Command::Configure(params) => {
                if let Err(e) = ConfigUpdate::from_params(&params) {
                    return format!("error: {e}");
                }
                let mut body = action("configure");
                for (k, v) in &params {
                    body.insert(k.clone(), PayloadValue::Text(v.clone()));
                }
                match self.publish(body) {
                    Ok(_) => {
                        let applied: Vec<String> =
                            params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                        format!("configured: {}", applied.join(" "))
                    }
                    Err(e) => format!("error: configure not delivered ({e})"),
                }
            }
            Command::Status => self.status_text(),
            Command::Help => HELP_TEXT.into(),
            Command::Unknown(raw) => format!("unrecognized command {raw:?}; {HELP_TEXT}"),
        }
    }

    pub fn status_text(&self) -> String {
        let view = self
            .probe
            .lock()
            .unwrap()
            .as_ref()
            .map(|p| p())
            .unwrap_or_default();
        let rec = self.metrics.snapshot();
        let mut s = format!(
            "status: running={} fps={:.2} frames={} pending_reports={} in_flight={}",
            view.running,
            rec.achieved_fps(),
            rec.frames_processed,
            view.pending_reports,
            view.in_flight
        );
        for kind in OutcomeKind::ALL {
            let _ = write!(s, " {}={}", kind, rec.outcome_count(kind));
        }
        s
    }

    /// Handle one inbound message end to end, including the reply post.
    pub fn handle_inbound(&self, msg: &ChannelMessage) {
        let text = self.reply_for(&msg.text);
        let reply = ChannelMessage::text(msg.channel.clone(), text, self.clock.now());
        if let Err(e) = self.adapter.post(&reply) {
            log::warn!("reply not posted: {e}");
            self.metrics.record_error("channel_send");
            return;
        }
        let latency = self.clock.now().since(msg.ts).as_millis() as u64;
        self.metrics.record_reply(latency);
    }

    /// Handle every message already waiting. Returns how many.
    pub fn poll(&self) -> usize {
        let mut n = 0;
        while let Some(msg) = self.adapter.recv_inbound(Duration::ZERO) {
            self.handle_inbound(&msg);
            n += 1;
        }
        n
    }

    /// Inbound loop for live runs; returns on stop or when the channel closes.
    pub fn run_inbound(&self, stop: &StopSignal) {
        while !stop.is_stopped() {
            match self.adapter.recv_inbound(Duration::from_millis(100)) {
                Some(msg) => self.handle_inbound(&msg),
                None if self.adapter.is_closed() => break,
                None => {}
            }
        }
    }
}

impl Handler for ControlAgent {
    fn handle(&self, _event: &Event) -> Result<(), HandlerError> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::MockAdapter;
    use crate::clock::SimClock;
    use crate::router::{DeliveryMode, Router, RouterConfig};

    struct Fixture {
        clock: SimClock,
        router: Router,
        adapter: Arc<MockAdapter>,
        control: Arc<ControlAgent>,
        comm: Arc<CommunicationAgent>,
        metrics: MetricsSink,
        commands: Arc<Mutex<Vec<Event>>>,
        dir: tempfile::TempDir,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let clock = SimClock::default();
        let c: Arc<dyn Clock> = Arc::new(clock.clone());
        let router = Router::new(c.clone(), RouterConfig::default());
        let metrics = MetricsSink::new();
        let adapter = Arc::new(MockAdapter::new("C1"));
        let control = Arc::new(ControlAgent::new(adapter.clone(), c.clone(), metrics.clone()));
        let cid = router.register_agent("control", control.clone()).unwrap();
        control.attach(router.publisher(&cid));
        let comm = Arc::new(CommunicationAgent::new(
            adapter.clone(),
            "C1",
            dir.path(),
            c,
            metrics.clone(),
        ));
        let mid = router.register_agent("communication", comm.clone()).unwrap();
        router.subscribe(&mid, REPORT, DeliveryMode::Background).unwrap();
        comm.attach(&router.publisher(&mid));
        let commands = Arc::new(Mutex::new(Vec::new()));
        let sink = commands.clone();
        let vid = router
            .register_agent(
                "vision",
                Arc::new(move |e: &Event| {
                    sink.lock().unwrap().push(e.clone());
                    Ok(())
                }),
            )
            .unwrap();
        router.subscribe(&vid, COMMAND, DeliveryMode::Inline).unwrap();
        Fixture {
            clock,
            router,
            adapter,
            control,
            comm,
            metrics,
            commands,
            dir,
        }
    }

    fn replies(f: &Fixture) -> Vec<String> {
        f.adapter.collect().into_iter().map(|m| m.text).collect()
    }

    #[test]
    fn start_publishes_and_confirms() {
        let f = fixture();
        f.adapter.inject_text("start", f.clock.now());
        assert_eq!(f.control.poll(), 1);
        f.router.dispatch_pending();
        assert_eq!(replies(&f), ["vision agent started"]);
        let cmds = f.commands.lock().unwrap();
        assert_eq!(cmds.len(), 1);
        assert_eq!(cmds[0].text("action"), Some("start"));
        assert_eq!(cmds[0].source.as_str(), "control");
    }

    #[test]
    fn invalid_configure_replies_error_without_event() {
        let f = fixture();
        f.adapter.inject_text("configure theta=1.5", f.clock.now());
        f.control.poll();
        f.router.dispatch_pending();
        let r = replies(&f);
        assert!(r[0].starts_with("error: invalid theta"), "{r:?}");
        assert!(f.commands.lock().unwrap().is_empty());
    }

    #[test]
    fn configure_echoes_values() {
        let f = fixture();
        f.adapter.inject_text("configure theta=0.5 labels=person,car", f.clock.now());
        f.control.poll();
        f.router.dispatch_pending();
        assert_eq!(replies(&f), ["configured: labels=person,car theta=0.5"]);
        let cmds = f.commands.lock().unwrap();
        assert_eq!(cmds[0].text("theta"), Some("0.5"));
        assert_eq!(cmds[0].text("labels"), Some("person,car"));
    }

    #[test]
    fn unknown_and_help() {
        let f = fixture();
        f.adapter.inject_text("dance", f.clock.now());
        f.adapter.inject_text("help", f.clock.now());
        f.control.poll();
        let r = replies(&f);
        assert!(r[0].starts_with("unrecognized command \"dance\""));
        assert_eq!(r[1], HELP_TEXT);
        assert_eq!(f.metrics.snapshot().replies, 2);
    }

    #[test]
    fn status_uses_probe() {
        let f = fixture();
        f.control.set_status_probe(|| StatusView {
            running: true,
            pending_reports: 3,
            in_flight: 1,
        });
        let s = f.control.status_text();
        assert!(s.contains("running=true"));
        assert!(s.contains("pending_reports=3 in_flight=1"));
        assert!(s.contains("delivered=0 timeout=0 dropped=0 llm_error=0"));
    }

    fn report(f: &Fixture, rel: &str) {
        let pid = f.router.agents().into_iter().find(|a| a.as_str() == "vision").unwrap();
        f.router
            .publisher(&pid)
            .publish(
                REPORT,
                payload([
                    ("path", PayloadValue::Path(rel.into())),
                    ("caption", PayloadValue::Text("ALERT: person x1".into())),
                ]),
            )
            .unwrap();
        f.router.dispatch_pending();
        f.comm.process_pending();
    }

    #[test]
    fn report_with_attachment() {
        let f = fixture();
        std::fs::write(f.dir.path().join("snap_1_1.png"), b"png").unwrap();
        report(&f, "snap_1_1.png");
        let posted = f.adapter.collect();
        assert_eq!(posted[0].text, "ALERT: person x1");
        assert_eq!(posted[0].attachment.as_deref(), Some(f.dir.path().join("snap_1_1.png").as_path()));
        assert_eq!(f.metrics.snapshot().posted, 1);
    }

    #[test]
    fn missing_snapshot_falls_back_to_text() {
        let f = fixture();
        report(&f, "gone.png");
        let posted = f.adapter.collect();
        assert_eq!(posted[0].text, "ALERT: person x1 [snapshot unavailable]");
        assert!(posted[0].attachment.is_none());
        assert_eq!(f.metrics.snapshot().fallback, 1);
    }

    #[test]
    fn post_retried_once_then_failed() {
        let f = fixture();
        f.adapter.fail_next_posts(1);
        report(&f, "gone.png");
        assert_eq!(f.adapter.collect().len(), 1);
        f.adapter.fail_next_posts(2);
        report(&f, "gone.png");
        assert!(f.adapter.collect().is_empty());
        let rec = f.metrics.snapshot();
        assert_eq!(rec.send_failed, 1);
        assert_eq!(rec.errors.get("channel_send"), Some(&1));
    }
}
