//! Scripted, deterministic runs on a simulated clock.
//!
//! A scenario file is a run config plus:
//! ```text
//! scenario.name = full-slow-llm
//! scenario.duration_s = 120        # or scenario.frames = 1200
//! inject.s1 = 70 status            # operator message at t = 70 s
//! assert.a1 = reports.timeout >= 1 # metric op number|metric
//! ```
//! The driver is a discrete-event loop: frame ticks, operator messages and
//! report completions are processed in time order, and the router is
//! drained after each one. Caption jobs take the model's modelled latency
//! (capped at the deadline) of virtual time.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use super::bootstrap::{bootstrap, make_llm, BootstrapError};
use super::config::{from_flat, ChannelKind, ConfigError, LlmKind, RunConfig};
use crate::channel::{ChannelAdapter, ChannelError, ChannelMessage, ConsoleAdapter, MessageId, MockAdapter};
use crate::clock::{secs_to_duration, Clock, SimClock, SIM_EPOCH};
use crate::flatfile::FlatFile;
use crate::metrics::Metrics;
use crate::reporting::{JobResult, SnapshotJob};
use crate::router::{DeliveryMode, Event, RouterStats, SHUTDOWN};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Config(ConfigError::validation(field, reason))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            _ => return None,
        })
    }

    fn as_str(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Number(f64),
    Metric(String),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Number(n) => write!(f, "{n}"),
            Operand::Metric(m) => f.write_str(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub id: String,
    pub metric: String,
    pub op: CmpOp,
    pub rhs: Operand,
}

impl fmt::Display for Assertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.metric, self.op.as_str(), self.rhs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub at: Duration,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub config: RunConfig,
    pub frames: u64,
    pub injections: Vec<Injection>,
    pub assertions: Vec<Assertion>,
}

fn known_metric(name: &str, known: &[String]) -> bool {
    name.starts_with("errors.") || known.iter().any(|k| k == name)
}

fn parse_assertion(id: &str, value: &str, known: &[String]) -> Result<Assertion, ScenarioError> {
    let key = format!("assert.{id}");
    let parts: Vec<&str> = value.split_whitespace().collect();
    let [metric, op, rhs] = parts[..] else {
        return Err(invalid(key, "expected `<metric> <op> <number|metric>`"));
    };
    let op = CmpOp::parse(op).ok_or_else(|| invalid(&key, format!("unknown operator {op:?}")))?;
    if !known_metric(metric, known) {
        return Err(invalid(&key, format!("unknown metric {metric:?}")));
    }
    let rhs = match rhs.parse::<f64>() {
        Ok(n) if n.is_finite() => Operand::Number(n),
        _ if known_metric(rhs, known) => Operand::Metric(rhs.to_string()),
        _ => return Err(invalid(&key, format!("{rhs:?} is neither a number nor a metric"))),
    };
    Ok(Assertion {
        id: id.to_string(),
        metric: metric.to_string(),
        op,
        rhs,
    })
}

/// Parse scenario text; relative paths resolve against `base_dir`.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<Scenario, ScenarioError> {
    let file = FlatFile::parse(text).map_err(ConfigError::from)?;
    for e in file.entries() {
        if let Some(rest) = e.key.strip_prefix("scenario.") {
            if !["name", "duration_s", "frames"].contains(&rest) {
                return Err(invalid(&e.key, "unknown key"));
            }
        }
    }
    let config = from_flat(&file, base_dir, &["scenario", "inject", "assert"])?;
    let name = file
        .get("scenario.name")
        .filter(|n| !n.is_empty())
        .ok_or_else(|| invalid("scenario.name", "required"))?
        .to_string();
    let frames = match (
        file.parse_opt::<f64>("scenario.duration_s").map_err(ConfigError::from)?,
        file.parse_opt::<u64>("scenario.frames").map_err(ConfigError::from)?,
    ) {
        (Some(_), Some(_)) => {
            return Err(invalid("scenario.frames", "give either duration_s or frames, not both"))
        }
        (Some(d), None) if d.is_finite() && d > 0.0 => (d * config.vision.frame_rate).round() as u64,
        (None, Some(n)) if n > 0 => n,
        (None, None) => return Err(invalid("scenario.duration_s", "required")),
        _ => return Err(invalid("scenario.duration_s", "must be finite and positive")),
    };

    let mut injections = Vec::new();
    for e in file.with_prefix("inject") {
        let (t, text) = e
            .value
            .split_once(char::is_whitespace)
            .ok_or_else(|| invalid(&e.key, "expected `<seconds> <message>`"))?;
        let t: f64 = t
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite() && *t >= 0.0)
            .ok_or_else(|| invalid(&e.key, format!("bad time {t:?}")))?;
        injections.push(Injection {
            at: secs_to_duration(t),
            text: text.trim().to_string(),
        });
    }
    injections.sort_by_key(|i| i.at);

    let known: Vec<String> = Metrics::collect("", &Default::default(), &RouterStats::default())
        .keys()
        .map(str::to_string)
        .collect();
    let assertions = file
        .with_prefix("assert")
        .map(|e| parse_assertion(&e.key["assert.".len()..], &e.value, &known))
        .collect::<Result<Vec<_>, _>>()?;

    if config.reporting.enabled && config.reporting.llm != LlmKind::Mock {
        return Err(invalid("reporting.llm", "scenarios run on a simulated clock and need the mock model"));
    }
    if config.channel == ChannelKind::Slack {
        return Err(invalid("channel.kind", "scenarios use the mock or console channel"));
    }
    Ok(Scenario {
        name,
        config,
        frames,
        injections,
        assertions,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_scenario(&text, &base)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssertionResult {
    pub assertion: Assertion,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

#[derive(Debug)]
pub struct ScenarioOutcome {
    pub name: String,
    pub metrics: Metrics,
    /// Exact text written to the metrics file.
    pub rendered: String,
    pub metrics_path: PathBuf,
    pub snapshot_dir: PathBuf,
    pub assertions: Vec<AssertionResult>,
    /// Every event in dispatch order.
    pub events: Vec<Event>,
    /// Every message posted to the channel.
    pub posts: Vec<ChannelMessage>,
    /// Number of caption jobs started on the dispatch thread.
    pub dispatch_violations: u64,
}

impl ScenarioOutcome {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

#[derive(Default)]
pub struct ScenarioOptions {
    /// Put the snapshot directory and metrics file under this directory.
    pub out_dir: Option<PathBuf>,
    /// Channel to use instead of the one named in the config.
    pub adapter: Option<Arc<dyn ChannelAdapter>>,
}

/// Records every post before handing it on.
struct Tap {
    inner: Arc<dyn ChannelAdapter>,
    posts: Mutex<Vec<ChannelMessage>>,
}

impl ChannelAdapter for Tap {
    fn post(&self, msg: &ChannelMessage) -> Result<MessageId, ChannelError> {
        let r = self.inner.post(msg);
        if r.is_ok() {
            self.posts.lock().unwrap().push(msg.clone());
        }
        r
    }

    fn recv_inbound(&self, timeout: Duration) -> Option<ChannelMessage> {
        self.inner.recv_inbound(timeout)
    }

    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }
}

enum Action {
    JobDone(SnapshotJob, JobResult),
    Inject(String),
    Frame,
}

impl Action {
    /// Tie-break at equal times: completions, then operator input, then frames.
    fn priority(&self) -> u8 {
        match self {
            Action::JobDone(..) => 0,
            Action::Inject(_) => 1,
            Action::Frame => 2,
        }
    }
}

#[derive(Default)]
struct Agenda {
    heap: BinaryHeap<Reverse<(u64, u8, u64)>>,
    actions: BTreeMap<u64, Action>,
    next: u64,
}

impl Agenda {
    fn push(&mut self, at_us: u64, action: Action) {
        let seq = self.next;
        self.next += 1;
        self.heap.push(Reverse((at_us, action.priority(), seq)));
        self.actions.insert(seq, action);
    }

    fn pop(&mut self) -> Option<(u64, Action)> {
        let Reverse((t, _, seq)) = self.heap.pop()?;
        Some((t, self.actions.remove(&seq).expect("scheduled action")))
    }
}

pub fn run_scenario(scenario: &Scenario, opts: ScenarioOptions) -> Result<ScenarioOutcome, ScenarioError> {
    let mut cfg = scenario.config.clone();
    if let Some(dir) = &opts.out_dir {
        let file_name = |p: &Path, fallback: &str| {
            dir.join(p.file_name().map_or_else(|| PathBuf::from(fallback), PathBuf::from))
        };
        cfg.snapshot_dir = file_name(&cfg.snapshot_dir, "snapshots");
        cfg.metrics_out = file_name(&cfg.metrics_out, "metrics.txt");
        cfg.log = cfg.log.as_deref().map(|l| file_name(l, "router.log"));
    }
    let sim = SimClock::new(SIM_EPOCH);
    let clock: Arc<dyn Clock> = Arc::new(sim.clone());
    let inner: Arc<dyn ChannelAdapter> = match opts.adapter {
        Some(a) => a,
        None => match cfg.channel {
            ChannelKind::Console => Arc::new(ConsoleAdapter::new(
                BufReader::new(std::io::empty()),
                std::io::stdout(),
                clock.clone(),
            )),
            _ => Arc::new(MockAdapter::new(cfg.channel_id.clone())),
        },
    };
    let tap = Arc::new(Tap {
        inner,
        posts: Mutex::new(Vec::new()),
    });
    let llm = make_llm(&cfg, clock.clone());
    let sys = bootstrap(&cfg, clock.clone(), tap.clone(), llm)?;
    let events = Arc::new(Mutex::new(Vec::new()));
    {
        let events = events.clone();
        sys.router
            .add_observer(move |e: &Event| events.lock().unwrap().push(e.clone()));
    }

    let start_us = sim.now_micros();
    let interval_us = cfg.vision.frame_interval().as_micros() as u64;
    let mut agenda = Agenda::default();
    for i in &scenario.injections {
        agenda.push(start_us + i.at.as_micros() as u64, Action::Inject(i.text.clone()));
    }
    if scenario.frames > 0 {
        agenda.push(start_us, Action::Frame);
    }
    let mut frames_left = scenario.frames;

    let settle = |agenda: &mut Agenda| loop {
        let mut progressed = sys.router.dispatch_pending() > 0;
        if sys.communication_mode == DeliveryMode::Background {
            progressed |= sys.communication.process_pending() > 0;
        }
        if let Some(rep) = &sys.reporting {
            while let Some(job) = rep.take_job() {
                let result = rep.run_job(&job);
                let done = sim.now_micros() + result.service.as_micros() as u64;
                agenda.push(done, Action::JobDone(job, result));
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    };

    settle(&mut agenda);
    while let Some((t, action)) = agenda.pop() {
        sim.set_micros(t);
        match action {
            Action::Frame => {
                if sys.vision.is_running() {
                    let frame = sys.vision.next_frame();
                    sys.vision.process_frame(frame);
                }
                frames_left -= 1;
                if frames_left > 0 {
                    agenda.push(t + interval_us, Action::Frame);
                }
            }
            Action::Inject(text) => {
                let mut msg = ChannelMessage::text(cfg.channel_id.clone(), text, sim.now());
                msg.user = Some("operator".into());
                sys.control.handle_inbound(&msg);
            }
            Action::JobDone(job, result) => {
                if let Some(rep) = &sys.reporting {
                    rep.complete(job, result);
                }
            }
        }
        settle(&mut agenda);
    }

    sys.router
        .publisher(&sys.control_id)
        .publish(SHUTDOWN, Default::default())
        .map_err(BootstrapError::from)?;
    sys.router.dispatch_pending();
    let dispatch_violations = match &sys.reporting {
        Some(rep) => {
            rep.drain();
            rep.dispatch_violations()
        }
        None => 0,
    };

    let metrics = Metrics::collect(&scenario.name, &sys.metrics.snapshot(), &sys.router.stats());
    let rendered = metrics.render();
    let metrics_path = cfg.metrics_out();
    if let Some(parent) = metrics_path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| ScenarioError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(&metrics_path, &rendered).map_err(|source| ScenarioError::Io {
        path: metrics_path.clone(),
        source,
    })?;

    let value = |name: &str| metrics.get(name).map_or(0.0, |v| v.as_f64());
    let assertions = scenario
        .assertions
        .iter()
        .map(|a| {
            let lhs = value(&a.metric);
            let rhs = match &a.rhs {
                Operand::Number(n) => *n,
                Operand::Metric(m) => value(m),
            };
            AssertionResult {
                assertion: a.clone(),
                lhs,
                rhs,
                passed: a.op.holds(lhs, rhs),
            }
        })
        .collect();

    let events = std::mem::take(&mut *events.lock().unwrap());
    let posts = std::mem::take(&mut *tap.posts.lock().unwrap());
    Ok(ScenarioOutcome {
        name: scenario.name.clone(),
        metrics,
        rendered,
        metrics_path,
        snapshot_dir: cfg.snapshot_dir(),
        assertions,
        events,
        posts,
        dispatch_violations,
    })
}
