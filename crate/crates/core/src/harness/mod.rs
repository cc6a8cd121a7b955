//! Configuration, bootstrap, scenario runner and live daemon.

pub mod bootstrap;
pub mod config;
pub mod daemon;
pub mod scenario;

pub use bootstrap::{bootstrap, make_adapter, make_backend, make_llm, BootstrapError, System};
pub use config::{
    load_config, parse_config, BackendSpec, ChannelKind, ConfigError, LlmKind, ReportingConfig,
    RunConfig,
};
pub use daemon::{run_daemon, DaemonError, DaemonOptions};
pub use scenario::{
    load_scenario, parse_scenario, run_scenario, Assertion, AssertionResult, Scenario,
    ScenarioError, ScenarioOptions, ScenarioOutcome,
};
