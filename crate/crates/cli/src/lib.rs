//! Config-driven verification campaigns over `collapse-core`, behind the
//! `collapse-lab` binary.

pub mod campaign;
pub mod config;
pub mod error;
pub mod flow;
pub mod layerwise;
pub mod minimize;
pub mod output;
pub mod perturb;

pub use campaign::{Campaign, CampaignRegistry, Plan};
pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, CliResult, EXIT_ASSERTION, EXIT_CONFIG, EXIT_PASS};
pub use output::Report;

/// Environment variable capping the worker threads.
pub const THREADS_VAR: &str = "COLLAPSE_LAB_THREADS";

/// Thread pool sized by `COLLAPSE_LAB_THREADS` (rayon's default when unset).
pub fn thread_pool(setting: Option<&str>) -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(raw) = setting {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("{THREADS_VAR} must be a positive integer, got {raw:?}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker threads: {e}")))
}
