//! Run configuration: flat `section.key = value` files, strict keys,
//! documented defaults.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::clock::secs_to_duration;
use crate::flatfile::{parse_bool, parse_resolution, FlatError, FlatFile};
use crate::reporting::{DEFAULT_BASE_URL, DEFAULT_MODEL};
use crate::router::{RouterConfig, DEFAULT_MAILBOX_CAPACITY, DEFAULT_QUEUE_CAPACITY};
use crate::vision::{SyntheticScript, VisionSettings};
use crate::TrackerConfig;

pub const LLM_BASE_URL_VAR: &str = "LLM_BASE_URL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{field}: {reason}")]
    Validation { field: String, reason: String },
}

impl ConfigError {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Offending key for validation errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Validation { field, .. } => Some(field),
            _ => None,
        }
    }
}

impl From<FlatError> for ConfigError {
    fn from(e: FlatError) -> Self {
        match e {
            FlatError::Parse { line, message } => ConfigError::Parse { line, message },
            FlatError::Invalid { key, reason } => ConfigError::Validation { field: key, reason },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Synthetic(SyntheticScript),
    /// Recording file, as written in the config.
    Replay(PathBuf),
    /// Name of an external model adapter.
    External(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlmKind {
    Ollama,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Mock,
    Console,
    Slack,
}

impl ChannelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Mock => "mock",
            ChannelKind::Console => "console",
            ChannelKind::Slack => "slack",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportingConfig {
    pub enabled: bool,
    pub llm: LlmKind,
    pub base_url: String,
    pub model: String,
    pub deadline: Duration,
    pub max_in_flight: usize,
    pub queue_cap: usize,
    pub prompt_cap: usize,
    /// Response delay of the mock model.
    pub mock_delay: Duration,
}

impl Default for ReportingConfig {
    fn default() -> Self {
        ReportingConfig {
            enabled: true,
            llm: LlmKind::Ollama,
            base_url: DEFAULT_BASE_URL.into(),
            model: DEFAULT_MODEL.into(),
            deadline: Duration::from_secs(60),
            max_in_flight: 1,
            queue_cap: 4,
            prompt_cap: crate::reporting::prompt::DEFAULT_PROMPT_CAP,
            mock_delay: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub backend: BackendSpec,
    pub vision: VisionSettings,
    pub reporting: ReportingConfig,
    pub channel: ChannelKind,
    pub channel_id: String,
    pub snapshot_dir: PathBuf,
    pub metrics_out: PathBuf,
    pub log: Option<PathBuf>,
    pub autostart: bool,
    /// Post snapshots straight to the channel when reporting is disabled.
    pub direct_post: bool,
    pub router: RouterConfig,
}

const KEYS: &[&str] = &[
    "backend.kind",
    "backend.path",
    "backend.descriptor",
    "backend.dropout",
    "backend.seed",
    "vision.frame_rate",
    "vision.resolution",
    "vision.conf",
    "vision.preview",
    "tracker.theta",
    "tracker.l_max",
    "tracker.dwell_s",
    "tracker.cooldown_s",
    "tracker.labels",
    "reporting.enabled",
    "reporting.llm",
    "reporting.base_url",
    "reporting.model",
    "reporting.deadline_s",
    "reporting.max_in_flight",
    "reporting.queue_cap",
    "reporting.prompt_cap",
    "reporting.mock_delay_s",
    "channel.kind",
    "channel.id",
    "run.snapshot_dir",
    "run.metrics_out",
    "run.log",
    "run.autostart",
    "run.direct_post",
    "router.queue_cap",
    "router.mailbox_cap",
];

/// Read, parse and validate a config file, then apply environment overrides.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut cfg = parse_config(&text, &base)?;
    cfg.apply_env(|k| std::env::var(k).ok());
    Ok(cfg)
}

/// Parse config text; relative paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigError> {
    let file = FlatFile::parse(text)?;
    from_flat(&file, base_dir, &[])
}

fn seconds(file: &FlatFile, key: &str, default: Duration) -> Result<Duration, ConfigError> {
    match file.parse_opt::<f64>(key)? {
        None => Ok(default),
        Some(s) if s.is_finite() && s >= 0.0 => Ok(secs_to_duration(s)),
        Some(s) => Err(ConfigError::validation(key, format!("{s} is not a non-negative number of seconds"))),
    }
}

fn positive(file: &FlatFile, key: &str, default: usize) -> Result<usize, ConfigError> {
    let v: usize = file.parse_or(key, default)?;
    if v == 0 {
        return Err(ConfigError::validation(key, "must be at least 1"));
    }
    Ok(v)
}

/// Build a config from parsed entries. Keys under `extra_prefixes` are left
/// to the caller; anything else unknown is rejected.
pub(crate) fn from_flat(
    file: &FlatFile,
    base_dir: &Path,
    extra_prefixes: &[&str],
) -> Result<RunConfig, ConfigError> {
    for e in file.entries() {
        let known = KEYS.contains(&e.key.as_str())
            || e.key.starts_with("object.")
            || extra_prefixes
                .iter()
                .any(|p| e.key.strip_prefix(p).is_some_and(|r| r.starts_with('.')));
        if !known {
            return Err(ConfigError::validation(&e.key, "unknown key"));
        }
    }

    let kind = file
        .get("backend.kind")
        .ok_or_else(|| ConfigError::validation("backend.kind", "required"))?;
    let objects = SyntheticScript::from_flat(file)?;
    if kind != "synthetic" && !objects.is_empty() {
        return Err(ConfigError::validation("object", "objects require backend.kind = synthetic"));
    }
    let backend = match kind {
        "synthetic" => {
            let dropout: f64 = file.parse_or("backend.dropout", 0.0)?;
            if !(0.0..=1.0).contains(&dropout) {
                return Err(ConfigError::validation("backend.dropout", "must lie in [0,1]"));
            }
            BackendSpec::Synthetic(SyntheticScript {
                objects,
                dropout,
                seed: file.parse_or("backend.seed", 0)?,
            })
        }
        "replay" => BackendSpec::Replay(
            file.get("backend.path")
                .ok_or_else(|| ConfigError::validation("backend.path", "required for replay"))?
                .into(),
        ),
        "external" => BackendSpec::External(
            file.get("backend.descriptor")
                .ok_or_else(|| ConfigError::validation("backend.descriptor", "required for external"))?
                .to_string(),
        ),
        other => {
            return Err(ConfigError::validation(
                "backend.kind",
                format!("{other:?} is not one of synthetic, replay, external"),
            ))
        }
    };

    let mut vision = VisionSettings::default();
    vision.frame_rate = file.parse_or("vision.frame_rate", vision.frame_rate)?;
    if !(vision.frame_rate.is_finite() && vision.frame_rate > 0.0) {
        return Err(ConfigError::validation("vision.frame_rate", "must be positive"));
    }
    if let Some(r) = file.get("vision.resolution") {
        (vision.width, vision.height) = parse_resolution("vision.resolution", r)?;
    }
    vision.conf_threshold = file.parse_or("vision.conf", vision.conf_threshold)?;
    if !(0.0..=1.0).contains(&vision.conf_threshold) {
        return Err(ConfigError::validation("vision.conf", "must lie in [0,1]"));
    }
    if let Some(p) = file.get("vision.preview") {
        vision.preview = parse_bool("vision.preview", p)?;
    }

    let defaults = TrackerConfig::default();
    let theta: f64 = file.parse_or("tracker.theta", defaults.theta)?;
    if !(theta > 0.0 && theta < 1.0) {
        return Err(ConfigError::validation("tracker.theta", format!("{theta} must lie strictly between 0 and 1")));
    }
    let l_max: u32 = file.parse_or("tracker.l_max", defaults.l_max)?;
    if l_max == 0 {
        return Err(ConfigError::validation("tracker.l_max", "must be at least 1"));
    }
    let dwell = seconds(file, "tracker.dwell_s", defaults.dwell)?;
    if dwell.is_zero() {
        return Err(ConfigError::validation("tracker.dwell_s", "must be positive"));
    }
    let cooldown = seconds(file, "tracker.cooldown_s", defaults.cooldown)?;
    let target_labels = match file.get("tracker.labels") {
        None => defaults.target_labels,
        Some(v) => {
            let set: BTreeSet<String> = v
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            if set.is_empty() {
                return Err(ConfigError::validation("tracker.labels", "at least one label required"));
            }
            set
        }
    };
    vision.tracker = TrackerConfig {
        theta,
        l_max,
        dwell,
        cooldown,
        target_labels,
    };

    let mut reporting = ReportingConfig::default();
    if let Some(v) = file.get("reporting.enabled") {
        reporting.enabled = parse_bool("reporting.enabled", v)?;
    }
    reporting.llm = match file.get("reporting.llm").unwrap_or("ollama") {
        "ollama" => LlmKind::Ollama,
        "mock" => LlmKind::Mock,
        other => {
            return Err(ConfigError::validation(
                "reporting.llm",
                format!("{other:?} is not one of ollama, mock"),
            ))
        }
    };
    if let Some(v) = file.get("reporting.base_url") {
        reporting.base_url = v.to_string();
    }
    if let Some(v) = file.get("reporting.model") {
        reporting.model = v.to_string();
    }
    reporting.deadline = seconds(file, "reporting.deadline_s", reporting.deadline)?;
    if reporting.deadline.is_zero() {
        return Err(ConfigError::validation("reporting.deadline_s", "must be positive"));
    }
    reporting.max_in_flight = positive(file, "reporting.max_in_flight", reporting.max_in_flight)?;
    reporting.queue_cap = positive(file, "reporting.queue_cap", reporting.queue_cap)?;
    reporting.prompt_cap = positive(file, "reporting.prompt_cap", reporting.prompt_cap)?;
    reporting.mock_delay = seconds(file, "reporting.mock_delay_s", reporting.mock_delay)?;
    if reporting.enabled {
        if reporting.base_url.trim().is_empty() {
            return Err(ConfigError::validation("reporting.base_url", "must not be empty"));
        }
        if reporting.model.trim().is_empty() {
            return Err(ConfigError::validation("reporting.model", "must not be empty"));
        }
    }

    let channel = match file
        .get("channel.kind")
        .ok_or_else(|| ConfigError::validation("channel.kind", "required"))?
    {
        "mock" => ChannelKind::Mock,
        "console" => ChannelKind::Console,
        "slack" => ChannelKind::Slack,
        other => {
            return Err(ConfigError::validation(
                "channel.kind",
                format!("{other:?} is not one of mock, console, slack"),
            ))
        }
    };
    let channel_id = match (channel, file.get("channel.id")) {
        (_, Some(id)) => id.to_string(),
        (ChannelKind::Slack, None) => {
            return Err(ConfigError::validation("channel.id", "required for slack"))
        }
        (kind, None) => kind.as_str().to_string(),
    };

    let flag = |key: &str| -> Result<bool, ConfigError> {
        Ok(match file.get(key) {
            Some(v) => parse_bool(key, v)?,
            None => false,
        })
    };

    Ok(RunConfig {
        base_dir: base_dir.to_path_buf(),
        backend,
        vision,
        reporting,
        channel,
        channel_id,
        snapshot_dir: file.get("run.snapshot_dir").unwrap_or("snapshots").into(),
        metrics_out: file.get("run.metrics_out").unwrap_or("metrics.txt").into(),
        log: file.get("run.log").map(PathBuf::from),
        autostart: flag("run.autostart")?,
        direct_post: flag("run.direct_post")?,
        router: RouterConfig {
            queue_capacity: positive(file, "router.queue_cap", DEFAULT_QUEUE_CAPACITY)?,
            mailbox_capacity: positive(file, "router.mailbox_cap", DEFAULT_MAILBOX_CAPACITY)?,
        },
    })
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

impl RunConfig {
    /// `p` against the config's directory unless absolute.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn snapshot_dir(&self) -> PathBuf {
        self.resolve(&self.snapshot_dir)
    }

    pub fn metrics_out(&self) -> PathBuf {
        self.resolve(&self.metrics_out)
    }

    pub fn log_path(&self) -> Option<PathBuf> {
        self.log.as_deref().map(|p| self.resolve(p))
    }

    /// Apply `LLM_BASE_URL` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(url) = lookup(LLM_BASE_URL_VAR).filter(|u| !u.trim().is_empty()) {
            self.reporting.base_url = url;
        }
    }

    /// Every setting, defaults included, in a fixed order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        match &self.backend {
            BackendSpec::Synthetic(s) => {
                kv("backend.kind", &"synthetic");
                kv("backend.dropout", &s.dropout);
                kv("backend.seed", &s.seed);
            }
            BackendSpec::Replay(p) => {
                kv("backend.kind", &"replay");
                kv("backend.path", &p.display());
            }
            BackendSpec::External(d) => {
                kv("backend.kind", &"external");
                kv("backend.descriptor", d);
            }
        }
        let v = &self.vision;
        kv("vision.frame_rate", &v.frame_rate);
        kv("vision.resolution", &format!("{}x{}", v.width, v.height));
        kv("vision.conf", &v.conf_threshold);
        kv("vision.preview", &v.preview);
        let t = &v.tracker;
        kv("tracker.theta", &t.theta);
        kv("tracker.l_max", &t.l_max);
        kv("tracker.dwell_s", &secs(t.dwell));
        kv("tracker.cooldown_s", &secs(t.cooldown));
        kv(
            "tracker.labels",
            &t.target_labels.iter().cloned().collect::<Vec<_>>().join(","),
        );
        let r = &self.reporting;
        kv("reporting.enabled", &r.enabled);
        kv(
            "reporting.llm",
            &match r.llm {
                LlmKind::Ollama => "ollama",
                LlmKind::Mock => "mock",
            },
        );
        kv("reporting.base_url", &r.base_url);
        kv("reporting.model", &r.model);
        kv("reporting.deadline_s", &secs(r.deadline));
        kv("reporting.max_in_flight", &r.max_in_flight);
        kv("reporting.queue_cap", &r.queue_cap);
        kv("reporting.prompt_cap", &r.prompt_cap);
        kv("reporting.mock_delay_s", &secs(r.mock_delay));
        kv("channel.kind", &self.channel.as_str());
        kv("channel.id", &self.channel_id);
        kv("run.snapshot_dir", &self.snapshot_dir.display());
        kv("run.metrics_out", &self.metrics_out.display());
        if let Some(l) = &self.log {
            kv("run.log", &l.display());
        }
        kv("run.autostart", &self.autostart);
        kv("run.direct_post", &self.direct_post);
        kv("router.queue_cap", &self.router.queue_capacity);
        kv("router.mailbox_cap", &self.router.mailbox_capacity);
        if let BackendSpec::Synthetic(s) = &self.backend {
            for o in &s.objects {
                let key = |f: &str| format!("object.{}.{f}", o.name);
                let b = o.bbox;
                kv(&key("label"), &o.label);
                kv(&key("start"), &o.start_frame);
                kv(&key("end"), &o.end_frame);
                kv(&key("box"), &format!("{},{},{},{}", b.x1, b.y1, b.x2, b.y2));
                kv(&key("velocity"), &format!("{},{}", o.velocity.0, o.velocity.1));
                kv(&key("confidence"), &o.confidence);
            }
        }
        out
    }
}
