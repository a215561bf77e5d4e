use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::Parser;
use collapse_lab::{thread_pool, CampaignRegistry, Overrides, EXIT_ASSERTION, EXIT_PASS, THREADS_VAR};

/// Runs one verification campaign and writes its CSV/JSON artifacts.
///
/// Exit codes: 0 when every check passed, 1 when a check failed, 2 on a
/// config or usage error (in which case nothing is written).
#[derive(Debug, Parser)]
#[command(name = "collapse-lab", version)]
struct Cli {
    /// Campaign to run.
    #[arg(value_parser = PossibleValuesParser::new(CampaignRegistry::default().names()))]
    command: String,
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Treat reported-only violations as failures.
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let registry = CampaignRegistry::default();
    let overrides = Overrides {
        seed: cli.seed,
        strict: cli.strict,
    };
    let setting = std::env::var(THREADS_VAR).ok();
    let result = thread_pool(setting.as_deref())
        .and_then(|pool| pool.install(|| registry.run(&cli.command, &cli.config, &cli.out, overrides)));
    match result {
        Ok(report) => {
            for note in &report.notes {
                eprintln!("note: {note}");
            }
            for failure in &report.failures {
                eprintln!("FAIL: {failure}");
            }
            println!(
                "{} {}: {} file(s) in {}",
                if report.passed { "PASS" } else { "FAIL" },
                report.command,
                report.files.len(),
                cli.out.display()
            );
            ExitCode::from(if report.passed { EXIT_PASS } else { EXIT_ASSERTION })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
