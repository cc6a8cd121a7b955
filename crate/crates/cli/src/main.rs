use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use watchpost::harness::{
    load_config, load_scenario, run_daemon, run_scenario, DaemonError, DaemonOptions,
    ScenarioError, ScenarioOptions,
};
use watchpost::router::StopSignal;

const EXIT_ASSERTION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "watchpost", about = "Edge surveillance agents: detect, track, caption, notify")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run live until interrupted (or until console input ends).
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a scripted scenario on a simulated clock and check its assertions.
    Scenario {
        #[arg(long)]
        file: PathBuf,
        /// Write snapshots and metrics here instead of the paths in the file.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check a config file and print it with every default filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the version.
    Version,
}

fn init_logging(default: &str) {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format_target(false)
        .init();
}

fn run(config: PathBuf) -> ExitCode {
    init_logging("info");
    let cfg = match load_config(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let stop = StopSignal::new();
    let s = stop.clone();
    if let Err(e) = ctrlc::set_handler(move || s.stop()) {
        log::warn!("no interrupt handler: {e}");
    }
    match run_daemon(&cfg, &stop, DaemonOptions::default()) {
        Ok(metrics) => {
            log::info!(
                "metrics written to {} ({} frames, {} reports delivered)",
                cfg.metrics_out().display(),
                metrics.count("frames_processed"),
                metrics.count("reports.delivered")
            );
            ExitCode::SUCCESS
        }
        Err(e @ DaemonError::Bootstrap(_)) | Err(e @ DaemonError::Adapter(_)) => {
            eprintln!("error: startup failed: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn scenario(file: PathBuf, out_dir: Option<PathBuf>) -> ExitCode {
    init_logging("warn");
    let sc = match load_scenario(&file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", file.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let out = match run_scenario(&sc, ScenarioOptions { out_dir, ..Default::default() }) {
        Ok(o) => o,
        Err(e @ ScenarioError::Config(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    println!("scenario {}", out.name);
    for a in &out.assertions {
        println!(
            "{} {}: {} (observed {})",
            if a.passed { "PASS" } else { "FAIL" },
            a.assertion.id,
            a.assertion,
            a.lhs
        );
    }
    println!("metrics: {}", out.metrics_path.display());
    if out.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ASSERTION)
    }
}

fn validate(config: PathBuf) -> ExitCode {
    match load_config(&config) {
        Ok(cfg) => {
            print!("{}", cfg.render());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}: {e}", config.display());
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Cmd::Run { config } => run(config),
        Cmd::Scenario { file, out_dir } => scenario(file, out_dir),
        Cmd::Validate { config } => validate(config),
        Cmd::Version => {
            println!("watchpost {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
    }
}
