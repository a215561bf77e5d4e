//! Response operators at the collapsed base point: block spectra against the
//! closed form, a λ_H sweep, and the exact vs first-order gap over β.

use collapse_core::linalg::{least_squares_slope, singular_values_desc};
use collapse_core::model::{collapsed_minimizer, ModelParams};
use collapse_core::perturbation::{
    compare_block_spectrum, exact_response, hessian_blocks, neumann_response, numeric_block_spectrum,
    spectrum_rows, BlockSpectrum, ResponseKind, ResponseRegistry,
};
use collapse_core::CollapseError;
use rayon::prelude::*;

use crate::campaign::{Campaign, Plan};
use crate::config::{echo, ExperimentConfig, Overrides, PerturbConfig};
use crate::error::{CliError, CliResult};
use crate::output::{num, opt_num, OutputDir, Report};

pub struct Perturb;

impl Campaign for Perturb {
    fn name(&self) -> &'static str {
        "perturb"
    }

    fn about(&self) -> &'static str {
        "block spectra of the linear-response operator at the collapsed minimizer"
    }

    fn prepare(&self, cfg: &ExperimentConfig, overrides: Overrides) -> CliResult<Box<dyn Plan>> {
        let mut section: PerturbConfig = cfg.section(self.name())?;
        if let Some(seed) = overrides.seed {
            section.frame_seed = seed;
        }
        let params = section.params()?;
        let registry = ResponseRegistry::default();
        for name in &section.operators {
            if registry.get(name).is_none() {
                return Err(CliError::Config(format!(
                    "[perturb] unknown operator {name:?}, known: {:?}",
                    registry.names()
                )));
            }
        }
        Ok(Box::new(PerturbPlan {
            section,
            params,
            registry,
        }))
    }
}

struct PerturbPlan {
    section: PerturbConfig,
    params: Vec<ModelParams>,
    registry: ResponseRegistry,
}

pub const SPECTRUM_COLUMNS: [&str; 9] = [
    "lambda_h",
    "beta",
    "operator",
    "k",
    "ktilde",
    "index",
    "sigma_numeric",
    "sigma_analytic",
    "abs_err",
];
pub const PLATEAU_COLUMNS: [&str; 7] = ["lambda_h", "beta", "k", "analytic", "numeric", "multiplicity", "abs_err"];
pub const BOUND_COLUMNS: [&str; 7] = ["lambda_h", "beta", "operator", "sigma_max", "sigma_min", "upper_bound", "pass"];
pub const SWEEP_COLUMNS: [&str; 5] = ["lambda_h", "beta", "gap_frobenius", "exact_frobenius", "relative_gap"];
pub const FIT_COLUMNS: [&str; 5] = ["lambda_h", "slope", "target", "tolerance", "pass"];

struct OperatorResult {
    name: String,
    kind: ResponseKind,
    blocks: Vec<BlockSpectrum>,
    sigma_max: f64,
    sigma_min: f64,
}

struct LambdaResult {
    lambda_h: f64,
    beta: f64,
    operators: Vec<OperatorResult>,
}

impl PerturbPlan {
    fn spectra(&self, p: &ModelParams) -> Result<LambdaResult, CollapseError> {
        let base = collapsed_minimizer(p, self.section.frame_seed)?;
        let classes = p.dims().classes;
        let mut operators = Vec::new();
        for name in &self.section.operators {
            let strategy = self.registry.get(name).expect("names checked in prepare");
            let f = strategy.build(&base.weights, &base.features, p)?;
            let mut blocks = Vec::with_capacity(classes * classes);
            for k in 0..classes {
                for kt in 0..classes {
                    blocks.push(match f.kind() {
                        ResponseKind::Neumann => compare_block_spectrum(&f, k, kt)?,
                        ResponseKind::ExactSchur => numeric_block_spectrum(&f, k, kt)?,
                    });
                }
            }
            let full = singular_values_desc(&f.to_dense());
            operators.push(OperatorResult {
                name: name.clone(),
                kind: f.kind(),
                blocks,
                sigma_max: full[0],
                sigma_min: full[full.len() - 1],
            });
        }
        Ok(LambdaResult {
            lambda_h: p.lambda_h(),
            beta: p.beta(),
            operators,
        })
    }

    fn beta_gap(&self, beta: f64) -> Result<(f64, f64), CollapseError> {
        let s = &self.section;
        let p = self.params[0]
            .with_lambda_h(s.beta_sweep_lambda_h)?
            .with_beta(beta)?;
        let base = collapsed_minimizer(&p, s.frame_seed)?;
        let exact = exact_response(&hessian_blocks(&base.weights, &base.features, &p)?, &p)?.to_dense();
        let first = neumann_response(&base.weights, &base.features, &p)?.to_dense();
        Ok(((&exact - first).norm(), exact.norm()))
    }
}

/// Groups equal analytic values of a diagonal block into plateaus.
fn plateau_rows(lr: &LambdaResult, s: &BlockSpectrum) -> Vec<Vec<String>> {
    let Some(analytic) = &s.analytic else { return Vec::new() };
    let mut rows = Vec::new();
    let mut start = 0;
    while start < analytic.values.len() {
        let value = analytic.values[start];
        let mut end = start + 1;
        while end < analytic.values.len() && (analytic.values[end] - value).abs() <= 1e-14 {
            end += 1;
        }
        let numeric = s.singular_values[start..end].iter().sum::<f64>() / (end - start) as f64;
        rows.push(vec![
            num(lr.lambda_h),
            num(lr.beta),
            s.k.to_string(),
            num(value),
            num(numeric),
            (end - start).to_string(),
            num((numeric - value).abs()),
        ]);
        start = end;
    }
    rows
}

impl Plan for PerturbPlan {
    fn echo(&self) -> String {
        echo("perturb", &self.section)
    }

    fn execute(&self, out: &OutputDir) -> CliResult<Report> {
        let s = &self.section;
        let mut report = Report::new("perturb");
        let results: Vec<Result<LambdaResult, CollapseError>> =
            self.params.par_iter().map(|p| self.spectra(p)).collect();

        let (mut spectrum, mut plateaus, mut bounds) = (Vec::new(), Vec::new(), Vec::new());
        for (i, res) in results.into_iter().enumerate() {
            let lr = match res {
                Ok(lr) => lr,
                Err(e) => {
                    report.fail(format!("lambda_h {}: {e}", s.lambda_hs[i]));
                    continue;
                }
            };
            for op in &lr.operators {
                for block in &op.blocks {
                    for row in spectrum_rows(block) {
                        spectrum.push(vec![
                            num(lr.lambda_h),
                            num(lr.beta),
                            op.name.clone(),
                            row.k.to_string(),
                            row.ktilde.to_string(),
                            row.index.to_string(),
                            num(row.sigma_numeric),
                            opt_num(row.sigma_analytic),
                            opt_num(row.abs_err),
                        ]);
                    }
                    if let Some(err) = block.max_abs_error() {
                        if err > s.spectrum_tol {
                            report.fail(format!(
                                "lambda_h {}, {} block ({}, {}): numeric vs analytic {err:.3e} > {:e}",
                                lr.lambda_h, op.name, block.k, block.ktilde, s.spectrum_tol
                            ));
                        }
                    }
                    if op.kind == ResponseKind::Neumann && block.k == block.ktilde {
                        plateaus.extend(plateau_rows(&lr, block));
                    }
                }
                let upper = 1.0 + lr.lambda_h / lr.beta;
                let ok = op.sigma_min > 0.0 && op.sigma_max <= upper + 1e-12;
                if !ok {
                    report.fail(format!(
                        "lambda_h {}, {}: full spectrum [{:e}, {:e}] outside (0, {upper:e}]",
                        lr.lambda_h, op.name, op.sigma_min, op.sigma_max
                    ));
                }
                bounds.push(vec![
                    num(lr.lambda_h),
                    num(lr.beta),
                    op.name.clone(),
                    num(op.sigma_max),
                    num(op.sigma_min),
                    num(upper),
                    ok.to_string(),
                ]);
            }
        }
        report.files.push(out.write_csv("spectrum.csv", &SPECTRUM_COLUMNS, &spectrum)?);
        report.files.push(out.write_csv("plateaus.csv", &PLATEAU_COLUMNS, &plateaus)?);
        report.files.push(out.write_csv("full_bounds.csv", &BOUND_COLUMNS, &bounds)?);

        if !s.beta_sweep.is_empty() {
            let gaps: Vec<Result<(f64, f64), CollapseError>> =
                s.beta_sweep.par_iter().map(|&b| self.beta_gap(b)).collect();
            let mut rows = Vec::new();
            let mut points = Vec::new();
            for (&beta, g) in s.beta_sweep.iter().zip(gaps) {
                match g {
                    Ok((gap, norm)) => {
                        rows.push(vec![num(s.beta_sweep_lambda_h), num(beta), num(gap), num(norm), num(gap / norm)]);
                        points.push((beta.ln(), gap.ln()));
                    }
                    Err(e) => report.fail(format!("beta {beta}: {e}")),
                }
            }
            report.files.push(out.write_csv("beta_sweep.csv", &SWEEP_COLUMNS, &rows)?);
            if let Some(slope) = least_squares_slope(&points) {
                let ok = (slope - s.slope_target).abs() <= s.slope_tol;
                if !ok {
                    report.fail(format!(
                        "exact vs first-order gap slope {slope:.4}, expected {} +- {}",
                        s.slope_target, s.slope_tol
                    ));
                }
                let fit = vec![vec![
                    num(s.beta_sweep_lambda_h),
                    num(slope),
                    num(s.slope_target),
                    num(s.slope_tol),
                    ok.to_string(),
                ]];
                report.files.push(out.write_csv("beta_sweep_fit.csv", &FIT_COLUMNS, &fit)?);
            } else {
                report.note("beta sweep needs two distinct beta values for a slope");
            }
        }
        Ok(report)
    }
}
