//! Reporting agent: captions snapshots with a language model and publishes
//! reports.

pub mod agent;
pub mod args;
pub mod llm;
pub mod outcome;
pub mod prompt;

pub use agent::{
    generate_caption, Captioned, JobResult, ReportingAgent, ReportingSettings, SnapshotJob,
};
pub use args::{format_args, ArgValue, ConfigArgs};
pub use llm::{
    CaptionError, LlmClient, LlmRequest, MockLlm, MockMode, OllamaClient, DEFAULT_BASE_URL,
    DEFAULT_MODEL,
};
pub use outcome::{OutcomeKind, ReportOutcome};
pub use prompt::{build_prompt, summarize};
