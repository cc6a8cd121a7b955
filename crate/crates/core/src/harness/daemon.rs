use std::io::Write;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::bootstrap::{bootstrap, make_adapter, make_llm, BootstrapError};
use super::config::RunConfig;
use crate::channel::{ChannelAdapter, ChannelError};
use crate::clock::{Clock, SystemClock};
use crate::metrics::Metrics;
use crate::router::{DeliveryMode, StopSignal, SHUTDOWN};

pub const STATUS_INTERVAL: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
    #[error("channel adapter: {0}")]
    Adapter(#[from] ChannelError),
    #[error("writing metrics to {path}: {source}")]
    Metrics {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("{0} thread panicked")]
    Fault(&'static str),
}

pub struct DaemonOptions {
    /// Channel to use instead of the one named in the config.
    pub adapter: Option<Arc<dyn ChannelAdapter>>,
    pub status_interval: Duration,
    /// Where periodic status lines go.
    pub status_out: Box<dyn Write + Send>,
}

impl Default for DaemonOptions {
    fn default() -> Self {
        DaemonOptions {
            adapter: None,
            status_interval: STATUS_INTERVAL,
            status_out: Box::new(std::io::stderr()),
        }
    }
}

fn join(h: JoinHandle<()>, name: &'static str) -> Result<(), DaemonError> {
    h.join().map_err(|_| DaemonError::Fault(name))
}

/// Run live until `stop` is set or the channel closes, then shut down in
/// order and write the metrics file.
pub fn run_daemon(cfg: &RunConfig, stop: &StopSignal, opts: DaemonOptions) -> Result<Metrics, DaemonError> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let adapter = match opts.adapter {
        Some(a) => a,
        None => make_adapter(cfg, clock.clone())?,
    };
    let llm = make_llm(cfg, clock.clone());
    let sys = bootstrap(cfg, clock, adapter.clone(), llm)?;
    log::info!(
        "watchpost running: channel={} reporting={}",
        adapter.descriptor(),
        sys.reporting.as_ref().map_or("off".into(), |r| r.client_descriptor())
    );

    let router_stop = StopSignal::new();
    let vision_stop = StopSignal::new();
    let report_stop = StopSignal::new();
    let comm_stop = StopSignal::new();
    let control_stop = StopSignal::new();

    let dispatch = {
        let router = sys.router.clone();
        let s = router_stop.clone();
        thread::Builder::new()
            .name("dispatch".into())
            .spawn(move || {
                router.run_dispatch(&s);
            })
            .expect("spawn dispatch")
    };
    let vision = {
        let v = sys.vision.clone();
        let s = vision_stop.clone();
        thread::Builder::new()
            .name("vision".into())
            .spawn(move || v.run_loop(&s))
            .expect("spawn vision")
    };
    let workers = sys
        .reporting
        .as_ref()
        .map(|r| r.spawn_workers(&report_stop))
        .unwrap_or_default();
    let comm = match sys.communication_mode {
        DeliveryMode::Background => sys.communication.spawn_worker(&comm_stop),
        DeliveryMode::Inline => None,
    };
    let control = {
        let c = sys.control.clone();
        let s = control_stop.clone();
        thread::Builder::new()
            .name("control".into())
            .spawn(move || c.run_inbound(&s))
            .expect("spawn control")
    };

    let status_out = Mutex::new(opts.status_out);
    let mut last_status = Instant::now();
    while !stop.is_stopped() && !control.is_finished() {
        thread::sleep(Duration::from_millis(50));
        if last_status.elapsed() >= opts.status_interval {
            last_status = Instant::now();
            let _ = writeln!(status_out.lock().unwrap(), "{}", sys.control.status_text());
        }
    }
    log::info!("shutting down");

    control_stop.stop();
    join(control, "control")?;
    if let Err(e) = sys
        .router
        .publisher(&sys.control_id)
        .publish(SHUTDOWN, Default::default())
    {
        log::warn!("shutdown event not published: {e}");
    }
    vision_stop.stop();
    join(vision, "vision")?;
    report_stop.stop();
    for w in workers {
        join(w, "reporting")?;
    }
    if let Some(r) = &sys.reporting {
        let n = r.drain();
        if n > 0 {
            log::warn!("{n} pending snapshot(s) dropped at shutdown");
        }
    }
    router_stop.stop();
    sys.router.notify();
    join(dispatch, "dispatch")?;
    comm_stop.stop();
    if let Some(c) = comm {
        join(c, "communication")?;
    }

    let metrics = Metrics::collect("live", &sys.metrics.snapshot(), &sys.router.stats());
    let path = cfg.metrics_out();
    let write = || -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, metrics.render())
    };
    write().map_err(|source| DaemonError::Metrics {
        path: path.clone(),
        source,
    })?;
    Ok(metrics)
}
