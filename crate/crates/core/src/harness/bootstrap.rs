use std::sync::Arc;

use thiserror::Error;

use super::config::{BackendSpec, ChannelKind, LlmKind, RunConfig};
use crate::channel::slack::SlackConfig;
use crate::channel::{
    ChannelAdapter, ChannelError, CommunicationAgent, ConsoleAdapter, ControlAgent, MockAdapter,
    SlackAdapter, StatusView,
};
use crate::clock::Clock;
use crate::metrics::MetricsSink;
use crate::reporting::{LlmClient, MockLlm, OllamaClient, ReportingAgent, ReportingSettings};
use crate::router::{
    AgentId, DeliveryMode, Router, RouterError, COMMAND, REPORT, SHUTDOWN, SNAPSHOT,
};
use crate::vision::backend::UnavailableBackend;
use crate::vision::{
    replay_backend, synthetic_backend, BackendError, DetectorBackend, SnapshotError, SnapshotStore,
    VisionAgent,
};

#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error("channel adapter: {0}")]
    Adapter(#[from] ChannelError),
    #[error("snapshot directory: {0}")]
    SnapshotDir(#[from] SnapshotError),
    #[error("detector backend: {0}")]
    Backend(#[from] BackendError),
    #[error("router: {0}")]
    Router(#[from] RouterError),
    #[error("log file: {0}")]
    Log(std::io::Error),
}

/// A wired, not yet running, system.
pub struct System {
    pub router: Router,
    pub clock: Arc<dyn Clock>,
    pub metrics: MetricsSink,
    pub adapter: Arc<dyn ChannelAdapter>,
    pub vision: Arc<VisionAgent>,
    pub reporting: Option<Arc<ReportingAgent>>,
    pub communication: Arc<CommunicationAgent>,
    pub communication_mode: DeliveryMode,
    pub control: Arc<ControlAgent>,
    pub control_id: AgentId,
}

pub fn make_backend(cfg: &RunConfig) -> Result<Box<dyn DetectorBackend>, BackendError> {
    Ok(match &cfg.backend {
        BackendSpec::Synthetic(script) => Box::new(synthetic_backend(script.clone())?),
        BackendSpec::Replay(path) => Box::new(replay_backend(&cfg.resolve(path))?),
        BackendSpec::External(d) => Box::new(UnavailableBackend {
            descriptor: d.clone(),
        }),
    })
}

pub fn make_llm(cfg: &RunConfig, clock: Arc<dyn Clock>) -> Arc<dyn LlmClient> {
    match cfg.reporting.llm {
        LlmKind::Mock => Arc::new(MockLlm::new(cfg.reporting.mock_delay, clock)),
        LlmKind::Ollama => Arc::new(OllamaClient::new(cfg.reporting.base_url.clone())),
    }
}

/// Adapter for live runs; the console reads standard input.
pub fn make_adapter(
    cfg: &RunConfig,
    clock: Arc<dyn Clock>,
) -> Result<Arc<dyn ChannelAdapter>, ChannelError> {
    Ok(match cfg.channel {
        ChannelKind::Mock => Arc::new(MockAdapter::new(cfg.channel_id.clone())),
        ChannelKind::Console => Arc::new(ConsoleAdapter::stdio(clock)),
        ChannelKind::Slack => Arc::new(SlackAdapter::connect(
            SlackConfig::from_env(cfg.channel_id.clone())?,
            clock,
        )?),
    })
}

pub fn reporting_settings(cfg: &RunConfig) -> ReportingSettings {
    ReportingSettings {
        model: cfg.reporting.model.clone(),
        deadline: cfg.reporting.deadline,
        max_in_flight: cfg.reporting.max_in_flight,
        queue_cap: cfg.reporting.queue_cap,
        prompt_cap: cfg.reporting.prompt_cap,
        ..Default::default()
    }
}

/// Register agents and subscriptions. Nothing runs until the caller drives
/// the router and the agents' loops.
pub fn bootstrap(
    cfg: &RunConfig,
    clock: Arc<dyn Clock>,
    adapter: Arc<dyn ChannelAdapter>,
    llm: Arc<dyn LlmClient>,
) -> Result<System, BootstrapError> {
    let router = Router::new(clock.clone(), cfg.router);
    if let Some(path) = cfg.log_path() {
        let f = std::fs::File::create(&path).map_err(BootstrapError::Log)?;
        router.set_log_sink(Box::new(std::io::LineWriter::new(f)));
    }
    let metrics = MetricsSink::new();
    let store = SnapshotStore::create(cfg.snapshot_dir())?;

    let vision = Arc::new(VisionAgent::new(
        make_backend(cfg)?,
        cfg.vision.clone(),
        store,
        clock.clone(),
        metrics.clone(),
    ));
    let vid = router.register_agent("vision", vision.clone())?;
    router.subscribe(&vid, COMMAND, DeliveryMode::Inline)?;
    router.subscribe(&vid, SHUTDOWN, DeliveryMode::Inline)?;
    vision.attach(router.publisher(&vid));

    let reporting = if cfg.reporting.enabled {
        let agent = Arc::new(ReportingAgent::new(
            llm,
            reporting_settings(cfg),
            clock.clone(),
            metrics.clone(),
        ));
        let rid = router.register_agent_with_mailbox(
            "reporting",
            agent.clone(),
            cfg.reporting.queue_cap,
        )?;
        router.subscribe(&rid, SNAPSHOT, DeliveryMode::Background)?;
        router.subscribe(&rid, COMMAND, DeliveryMode::Inline)?;
        router.subscribe(&rid, SHUTDOWN, DeliveryMode::Inline)?;
        agent.attach(router.publisher(&rid));
        Some(agent)
    } else {
        None
    };

    // Slack posts go over the network, so they are taken off the dispatch
    // path; local adapters post inline.
    let communication_mode = match cfg.channel {
        ChannelKind::Slack => DeliveryMode::Background,
        _ => DeliveryMode::Inline,
    };
    let communication = Arc::new(CommunicationAgent::new(
        adapter.clone(),
        cfg.channel_id.clone(),
        cfg.snapshot_dir(),
        clock.clone(),
        metrics.clone(),
    ));
    let cid = router.register_agent("communication", communication.clone())?;
    router.subscribe(&cid, REPORT, communication_mode)?;
    if !cfg.reporting.enabled && cfg.direct_post {
        router.subscribe(&cid, SNAPSHOT, communication_mode)?;
    }
    router.subscribe(&cid, COMMAND, DeliveryMode::Inline)?;
    router.subscribe(&cid, SHUTDOWN, DeliveryMode::Inline)?;
    communication.attach(&router.publisher(&cid));

    let control = Arc::new(ControlAgent::new(adapter.clone(), clock.clone(), metrics.clone()));
    let control_id = router.register_agent("control", control.clone())?;
    control.attach(router.publisher(&control_id));
    {
        let vision = vision.clone();
        let reporting = reporting.clone();
        control.set_status_probe(move || StatusView {
            running: vision.is_running(),
            pending_reports: reporting.as_ref().map_or(0, |r| r.pending()),
            in_flight: reporting.as_ref().map_or(0, |r| r.in_flight()),
        });
    }

    if cfg.autostart {
        vision.start();
    }

    Ok(System {
        router,
        clock,
        metrics,
        adapter,
        vision,
        reporting,
        communication,
        communication_mode,
        control,
        control_id,
    })
}
