//! Repeated proximal steps, one per "layer", tracking the collapse metrics.

use collapse_core::metrics::MetricReport;
use collapse_core::model::ModelParams;
use collapse_core::prox::layerwise_stack;
use collapse_core::random::{clustered_features, seeded_rng};
use collapse_core::CollapseError;
use rayon::prelude::*;

use crate::campaign::{Campaign, Plan};
use crate::config::{echo, ExperimentConfig, LayerwiseConfig, Overrides};
use crate::error::CliResult;
use crate::output::{num, opt_num, OutputDir, Report};

pub struct Layerwise;

impl Campaign for Layerwise {
    fn name(&self) -> &'static str {
        "layerwise"
    }

    fn about(&self) -> &'static str {
        "stack proximal steps and track NC1 layer by layer"
    }

    fn prepare(&self, cfg: &ExperimentConfig, overrides: Overrides) -> CliResult<Box<dyn Plan>> {
        let mut section: LayerwiseConfig = cfg.section(self.name())?;
        if let Some(seed) = overrides.seed {
            section.seeds = vec![seed];
        }
        section.strict |= overrides.strict;
        let params = section.params()?;
        Ok(Box::new(LayerwisePlan { section, params }))
    }
}

struct LayerwisePlan {
    section: LayerwiseConfig,
    params: ModelParams,
}

pub const COLUMNS: [&str; 9] = [
    "seed",
    "layer",
    "nc1_tilde",
    "nc1_fisher",
    "nc2",
    "nc3",
    "trSW",
    "trSB",
    "nc1_increase",
];

/// Layers whose NC1 exceeds the previous layer's by more than `tol` relative.
pub fn increases(reports: &[MetricReport], tol: f64) -> Vec<usize> {
    reports
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].nc1_tilde > w[0].nc1_tilde * (1.0 + tol))
        .map(|(i, _)| i + 1)
        .collect()
}

impl Plan for LayerwisePlan {
    fn echo(&self) -> String {
        echo("layerwise", &self.section)
    }

    fn execute(&self, out: &OutputDir) -> CliResult<Report> {
        let s = &self.section;
        let solver = s.solver();
        let results: Vec<Result<Vec<MetricReport>, CollapseError>> = s
            .seeds
            .par_iter()
            .map(|&seed| {
                let h0 = clustered_features(&mut seeded_rng(seed), self.params.dims(), s.spread);
                layerwise_stack(&h0, &self.params, s.depth, &solver)
            })
            .collect();

        let mut report = Report::new("layerwise");
        let mut rows = Vec::new();
        for (&seed, res) in s.seeds.iter().zip(results) {
            let reports = match res {
                Ok(r) => r,
                Err(e) => {
                    report.fail(format!("seed {seed}: {e}"));
                    continue;
                }
            };
            let bad = increases(&reports, s.monotone_tol);
            for (layer, m) in reports.iter().enumerate() {
                rows.push(vec![
                    seed.to_string(),
                    layer.to_string(),
                    num(m.nc1_tilde),
                    num(m.nc1_fisher),
                    num(m.nc2),
                    opt_num(m.nc3),
                    num(m.trace_within),
                    num(m.trace_between),
                    bad.contains(&layer).to_string(),
                ]);
            }
            if !bad.is_empty() {
                let msg = format!("seed {seed}: NC1 increased at layers {bad:?}");
                if s.strict {
                    report.fail(msg);
                } else {
                    report.note(msg);
                }
            }
        }
        report.files.push(out.write_csv("layerwise.csv", &COLUMNS, &rows)?);
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn report(nc1: f64) -> MetricReport {
        MetricReport {
            nc1_tilde: nc1,
            nc1_fisher: nc1,
            nc1_per_class: DVector::zeros(2),
            nc2: 0.0,
            nc3: None,
            trace_within: 0.0,
            trace_between: 1.0,
        }
    }

    #[test]
    fn increase_detection_is_relative() {
        let seq: Vec<MetricReport> = [1.0, 0.5, 0.5 + 1e-12, 0.6, 0.1].into_iter().map(report).collect();
        assert_eq!(increases(&seq, 1e-9), vec![3]);
        assert!(increases(&seq[..1], 1e-9).is_empty());
    }
}
