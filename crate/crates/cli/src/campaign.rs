//! Campaign registry. A campaign validates its config section into a plan
//! before any output exists, then the plan runs and writes its artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::{ExperimentConfig, Overrides};
use crate::error::CliResult;
use crate::output::{OutputDir, Report};

pub trait Campaign: Send + Sync {
    fn name(&self) -> &'static str;
    fn about(&self) -> &'static str;
    /// Parses and validates this campaign's section; must not touch the filesystem.
    fn prepare(&self, cfg: &ExperimentConfig, overrides: Overrides) -> CliResult<Box<dyn Plan>>;
}

/// A validated campaign, ready to run.
pub trait Plan {
    /// Effective config as TOML, echoed into every CSV.
    fn echo(&self) -> String;
    fn execute(&self, out: &OutputDir) -> CliResult<Report>;
}

pub struct CampaignRegistry {
    entries: BTreeMap<&'static str, Box<dyn Campaign>>,
}

impl CampaignRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, c: Box<dyn Campaign>) {
        self.entries.insert(c.name(), c);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Campaign> {
        self.entries.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    /// Loads the config, validates the named campaign, and only then creates
    /// `out` and runs it.
    pub fn run(&self, name: &str, config: &Path, out: &Path, overrides: Overrides) -> CliResult<Report> {
        let campaign = self
            .get(name)
            .ok_or_else(|| crate::error::CliError::Config(format!("unknown command {name:?}")))?;
        let cfg = ExperimentConfig::load(config, &self.names())?;
        let plan = campaign.prepare(&cfg, overrides)?;
        let dir = OutputDir::create(out, plan.echo())?;
        let report = plan.execute(&dir)?;
        report.finish(&dir)
    }
}

impl Default for CampaignRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(crate::minimize::Minimize));
        r.register(Box::new(crate::flow::Flow));
        r.register(Box::new(crate::perturb::Perturb));
        r.register(Box::new(crate::layerwise::Layerwise));
        r
    }
}
