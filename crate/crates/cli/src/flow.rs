//! Central-path flow traces over a λ_H sweep and a set of seeds.

use collapse_core::central_path::{check_monotone, flow_integrate, within_decay_rate, FlowTrace};
use collapse_core::model::{collapsed_minimizer, FeatureMatrix, ModelParams};
use collapse_core::random::{clustered_features, seeded_rng};
use rayon::prelude::*;

use crate::campaign::{Campaign, Plan};
use crate::config::{echo, ExperimentConfig, FlowConfig, FlowInit, Overrides};
use crate::error::CliResult;
use crate::output::{num, opt_num, OutputDir, Report};

pub struct Flow;

impl Campaign for Flow {
    fn name(&self) -> &'static str {
        "flow"
    }

    fn about(&self) -> &'static str {
        "integrate the central-path flow and check its monotone quantities"
    }

    fn prepare(&self, cfg: &ExperimentConfig, overrides: Overrides) -> CliResult<Box<dyn Plan>> {
        let mut section: FlowConfig = cfg.section(self.name())?;
        if let Some(seed) = overrides.seed {
            section.seeds = vec![seed];
        }
        let params = section.params()?;
        Ok(Box::new(FlowPlan { section, params }))
    }
}

struct FlowPlan {
    section: FlowConfig,
    params: Vec<ModelParams>,
}

pub const TRACE_COLUMNS: [&str; 8] = [
    "step",
    "t",
    "trSW",
    "trSB",
    "nc1_tilde",
    "loss",
    "scaled_trSW",
    "scaled_trSB",
];
const METRIC_COLUMNS: [&str; 3] = ["nc1_fisher", "nc2", "nc3"];

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "lambda_h",
    "seed",
    "file",
    "samples",
    "decay_rate",
    "decay_reference",
    "max_halvings_used",
    "nc1_violations",
    "within_violations",
    "between_violations",
    "pass",
];

struct Cell {
    index: usize,
    seed: u64,
    outcome: CliResult<FlowTrace>,
}

fn initial(section: &FlowConfig, p: &ModelParams, seed: u64) -> CliResult<FeatureMatrix> {
    Ok(match section.init {
        FlowInit::Clustered => clustered_features(&mut seeded_rng(seed), p.dims(), section.spread),
        FlowInit::Collapsed => collapsed_minimizer(p, seed)?.features,
    })
}

impl Plan for FlowPlan {
    fn echo(&self) -> String {
        echo("flow", &self.section)
    }

    fn execute(&self, out: &OutputDir) -> CliResult<Report> {
        let s = &self.section;
        let integrator = s.integrator();
        let jobs: Vec<(usize, u64)> = (0..self.params.len())
            .flat_map(|i| s.seeds.iter().map(move |&seed| (i, seed)))
            .collect();
        let cells: Vec<Cell> = jobs
            .par_iter()
            .map(|&(index, seed)| {
                let p = &self.params[index];
                let outcome = initial(s, p, seed).and_then(|h0| Ok(flow_integrate(&h0, p, &integrator)?));
                Cell { index, seed, outcome }
            })
            .collect();

        let mut report = Report::new("flow");
        let mut summary = Vec::new();
        for cell in cells {
            let lh = s.lambda_hs[cell.index];
            let trace = match cell.outcome {
                Ok(t) => t,
                Err(e) => {
                    report.fail(format!("lambda_h {lh}, seed {}: {e}", cell.seed));
                    continue;
                }
            };
            let name = format!("flow_lh{}_seed{}.csv", cell.index, cell.seed);
            let mut header: Vec<&str> = TRACE_COLUMNS.to_vec();
            if s.with_metrics {
                header.extend(METRIC_COLUMNS);
            }
            let rows: Vec<Vec<String>> = trace
                .samples
                .iter()
                .map(|x| {
                    let mut row = vec![
                        x.step.to_string(),
                        num(x.t),
                        num(x.trace_within),
                        num(x.trace_between),
                        opt_num(x.nc1_tilde),
                        num(x.loss),
                        num(x.scaled_within(lh)),
                        num(x.scaled_between(lh)),
                    ];
                    if s.with_metrics {
                        let m = x.metrics.as_ref();
                        row.push(opt_num(m.map(|m| m.nc1_fisher)));
                        row.push(opt_num(m.map(|m| m.nc2)));
                        row.push(opt_num(m.and_then(|m| m.nc3)));
                    }
                    row
                })
                .collect();
            report.files.push(out.write_csv(&name, &header, &rows)?);

            let mono = check_monotone(&trace, lh, s.monotone_tol);
            // The rate fit is only meaningful while Σ_W is still resolvable.
            let rate = if lh > 0.0 { within_decay_rate(&trace) } else { None };
            if !mono.ok() {
                report.fail(format!(
                    "lambda_h {lh}, seed {}: monotonicity violated at samples nc1 {:?}, within {:?}, between {:?}",
                    cell.seed, mono.nc1_not_decreasing, mono.scaled_within_increasing, mono.scaled_between_not_increasing
                ));
            }
            summary.push(vec![
                num(lh),
                cell.seed.to_string(),
                name,
                trace.samples.len().to_string(),
                opt_num(rate),
                if lh > 0.0 { num(-2.0 * lh) } else { String::new() },
                trace.max_halvings_used.to_string(),
                mono.nc1_not_decreasing.len().to_string(),
                mono.scaled_within_increasing.len().to_string(),
                mono.scaled_between_not_increasing.len().to_string(),
                mono.ok().to_string(),
            ]);
        }
        report.files.push(out.write_csv("flow_summary.csv", &SUMMARY_COLUMNS, &summary)?);
        Ok(report)
    }
}
