//! TOML experiment configs.
//!
//! A config file holds `schema_version` plus one optional table per campaign
//! (`[minimize]`, `[flow]`, `[perturb]`, `[layerwise]`). Missing tables and
//! missing keys take the documented defaults; unknown keys are rejected.

use std::path::Path;

use collapse_core::model::{Dims, ModelParams};
use collapse_core::prox::SolveConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CliError, CliResult};

pub const SCHEMA_VERSION: i64 = 1;

/// A parsed config file: the version-checked top-level table.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    table: toml::Table,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, known_sections: &[&str]) -> CliResult<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(format!("malformed TOML: {e}")))?;
        match table.get("schema_version") {
            Some(toml::Value::Integer(v)) if *v == SCHEMA_VERSION => {}
            Some(other) => {
                return Err(CliError::Config(format!(
                    "unsupported schema_version {other}, this build reads {SCHEMA_VERSION}"
                )))
            }
            None => return Err(CliError::Config("missing schema_version".into())),
        }
        for (key, value) in &table {
            if key == "schema_version" {
                continue;
            }
            if !known_sections.contains(&key.as_str()) {
                return Err(CliError::Config(format!("unknown top-level key {key:?}")));
            }
            if !value.is_table() {
                return Err(CliError::Config(format!("[{key}] must be a table")));
            }
        }
        Ok(Self { table })
    }

    pub fn load(path: &Path, known_sections: &[&str]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, known_sections)
    }

    /// The named section, or its defaults when absent.
    pub fn section<T: DeserializeOwned + Default>(&self, name: &str) -> CliResult<T> {
        match self.table.get(name) {
            None => Ok(T::default()),
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| CliError::Config(format!("[{name}] {e}"))),
        }
    }
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub strict: bool,
}

/// The effective section as TOML text, for the comment header of every CSV.
pub fn echo<T: Serialize>(command: &str, section: &T) -> String {
    let mut table = toml::Table::new();
    table.insert("schema_version".into(), toml::Value::Integer(SCHEMA_VERSION));
    let body = toml::Value::try_from(section).expect("config sections serialize to TOML");
    table.insert(command.into(), body);
    format!("collapse-lab {command}\n{}", toml::to_string(&table).expect("table serializes"))
}

fn model_params(section: &str, dims: (usize, usize, usize), lw: f64, lh: f64, beta: f64) -> CliResult<ModelParams> {
    let dims = Dims::new(dims.0, dims.1, dims.2).map_err(|e| invalid(section, e))?;
    ModelParams::new(dims, lw, lh, beta).map_err(|e| invalid(section, e))
}

fn positive(section: &str, name: &str, v: f64) -> CliResult<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("[{section}] {name} must be positive, got {v}")))
    }
}

fn nonempty<T>(section: &str, name: &str, v: &[T]) -> CliResult<()> {
    if v.is_empty() {
        Err(CliError::Config(format!("[{section}] {name} must not be empty")))
    } else {
        Ok(())
    }
}

fn collapsible(section: &str, p: &ModelParams) -> CliResult<()> {
    p.check_collapsible().map_err(|e| invalid(section, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeConfig {
    pub classes: usize,
    pub per_class: usize,
    pub feature_dim: usize,
    pub lambda_w: f64,
    pub lambda_h: f64,
    pub seeds: Vec<u64>,
    /// standard deviation of the random starting W and H
    pub init_scale: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub objective_rel_tol: f64,
    /// entrywise tolerance on the class-mean Gram, ρ and within-class spread
    pub gram_tol: f64,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class: 10,
            feature_dim: 10,
            lambda_w: 2.0,
            lambda_h: 0.125,
            seeds: (0..10).collect(),
            init_scale: 0.5,
            grad_tol: 1e-9,
            max_iters: 200_000,
            objective_rel_tol: 1e-6,
            gram_tol: 1e-4,
        }
    }
}

impl MinimizeConfig {
    pub fn params(&self) -> CliResult<ModelParams> {
        let s = "minimize";
        let p = model_params(s, (self.classes, self.per_class, self.feature_dim), self.lambda_w, self.lambda_h, 1.0)?;
        if !(self.lambda_h > 0.0) {
            return Err(CliError::Config(
                "[minimize] lambda_h must be positive; without feature decay the infimum is not attained".into(),
            ));
        }
        nonempty(s, "seeds", &self.seeds)?;
        positive(s, "init_scale", self.init_scale)?;
        positive(s, "grad_tol", self.grad_tol)?;
        positive(s, "objective_rel_tol", self.objective_rel_tol)?;
        positive(s, "gram_tol", self.gram_tol)?;
        if self.max_iters == 0 {
            return Err(CliError::Config("[minimize] max_iters must be >= 1".into()));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowInit {
    /// class means plus Gaussian noise of size `spread`
    Clustered,
    /// the collapsed minimizer, a stationary point of the flow
    Collapsed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub classes: usize,
    pub per_class: usize,
    pub feature_dim: usize,
    pub lambda_w: f64,
    pub lambda_hs: Vec<f64>,
    pub seeds: Vec<u64>,
    pub init: FlowInit,
    pub spread: f64,
    pub t_end: f64,
    pub dt: f64,
    pub max_halvings: u32,
    pub record_every: usize,
    pub monotone_tol: f64,
    pub with_metrics: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class: 5,
            feature_dim: 8,
            lambda_w: 1.0,
            lambda_hs: vec![0.0, 0.1, 0.5],
            seeds: vec![0],
            init: FlowInit::Clustered,
            spread: 0.5,
            t_end: 5.0,
            dt: 1e-3,
            max_halvings: 20,
            record_every: 10,
            monotone_tol: 1e-9,
            with_metrics: false,
        }
    }
}

impl FlowConfig {
    /// One parameter set per entry of `lambda_hs`.
    pub fn params(&self) -> CliResult<Vec<ModelParams>> {
        let s = "flow";
        nonempty(s, "lambda_hs", &self.lambda_hs)?;
        nonempty(s, "seeds", &self.seeds)?;
        positive(s, "spread", self.spread)?;
        positive(s, "monotone_tol", self.monotone_tol)?;
        self.integrator().validate().map_err(|e| invalid(s, e))?;
        let mut out = Vec::with_capacity(self.lambda_hs.len());
        for &lh in &self.lambda_hs {
            let p = model_params(s, (self.classes, self.per_class, self.feature_dim), self.lambda_w, lh, 1.0)?;
            if self.init == FlowInit::Collapsed {
                collapsible(s, &p)?;
            }
            out.push(p);
        }
        Ok(out)
    }

    pub fn integrator(&self) -> collapse_core::central_path::FlowConfig {
        collapse_core::central_path::FlowConfig {
            t_end: self.t_end,
            dt: self.dt,
            max_halvings: self.max_halvings,
            record_every: self.record_every,
            with_metrics: self.with_metrics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub classes: usize,
    pub per_class: usize,
    pub feature_dim: usize,
    pub lambda_w: f64,
    pub beta: f64,
    /// one spectrum set per value
    pub lambda_hs: Vec<f64>,
    /// response operators by registry name
    pub operators: Vec<String>,
    /// seed of the orthonormal frame of the collapsed base point
    pub frame_seed: u64,
    /// allowed |numeric − analytic| for first-order block spectra
    pub spectrum_tol: f64,
    /// β values for the exact vs first-order gap; empty skips the sweep
    pub beta_sweep: Vec<f64>,
    pub beta_sweep_lambda_h: f64,
    pub slope_target: f64,
    pub slope_tol: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class: 10,
            feature_dim: 10,
            lambda_w: 2.0,
            beta: 100.0,
            lambda_hs: vec![0.125],
            operators: vec!["neumann".into(), "exact_schur".into()],
            frame_seed: 0,
            spectrum_tol: 1e-8,
            beta_sweep: vec![1e2, 1e3, 1e4],
            beta_sweep_lambda_h: 0.125,
            slope_target: -2.0,
            slope_tol: 0.15,
        }
    }
}

impl PerturbConfig {
    pub fn params(&self) -> CliResult<Vec<ModelParams>> {
        let s = "perturb";
        nonempty(s, "lambda_hs", &self.lambda_hs)?;
        nonempty(s, "operators", &self.operators)?;
        positive(s, "beta", self.beta)?;
        positive(s, "spectrum_tol", self.spectrum_tol)?;
        positive(s, "slope_tol", self.slope_tol)?;
        if self.feature_dim <= self.classes {
            return Err(CliError::Config(format!(
                "[perturb] block spectra need feature_dim > classes, got {} <= {}",
                self.feature_dim, self.classes
            )));
        }
        for &b in &self.beta_sweep {
            positive(s, "beta_sweep entry", b)?;
        }
        if !self.beta_sweep.is_empty() {
            let p = model_params(s, self.dims(), self.lambda_w, self.beta_sweep_lambda_h, self.beta_sweep[0])?;
            collapsible(s, &p)?;
        }
        self.lambda_hs
            .iter()
            .map(|&lh| {
                let p = model_params(s, self.dims(), self.lambda_w, lh, self.beta)?;
                collapsible(s, &p)?;
                Ok(p)
            })
            .collect()
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.classes, self.per_class, self.feature_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerwiseConfig {
    pub classes: usize,
    pub per_class: usize,
    pub feature_dim: usize,
    pub lambda_w: f64,
    pub lambda_h: f64,
    pub beta: f64,
    pub depth: usize,
    pub seeds: Vec<u64>,
    pub spread: f64,
    /// relative increase of NC1 tolerated between layers
    pub monotone_tol: f64,
    /// fail on NC1 increases instead of only reporting them
    pub strict: bool,
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for LayerwiseConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class: 5,
            feature_dim: 8,
            lambda_w: 1.0,
            lambda_h: 0.25,
            beta: 1e3,
            depth: 10,
            seeds: (0..10).collect(),
            spread: 0.5,
            monotone_tol: 1e-9,
            strict: false,
            grad_tol: 1e-10,
            max_iters: 100_000,
        }
    }
}

impl LayerwiseConfig {
    pub fn params(&self) -> CliResult<ModelParams> {
        let s = "layerwise";
        nonempty(s, "seeds", &self.seeds)?;
        positive(s, "spread", self.spread)?;
        positive(s, "monotone_tol", self.monotone_tol)?;
        self.solver().validate().map_err(|e| invalid(s, e))?;
        model_params(s, (self.classes, self.per_class, self.feature_dim), self.lambda_w, self.lambda_h, self.beta)
    }

    pub fn solver(&self) -> SolveConfig {
        SolveConfig {
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
            ..SolveConfig::default()
        }
    }
}
