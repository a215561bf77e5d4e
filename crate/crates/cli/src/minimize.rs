//! Joint minimization from random starts, compared against the closed-form
//! minimizer (or against (0, 0) when c ≥ 1).

use collapse_core::joint::{minimize_joint, JointConfig};
use collapse_core::linalg::max_abs;
use collapse_core::model::{collapsed_minimizer, objective_plain, ModelParams, WeightMatrix};
use collapse_core::random::{gaussian_features, gaussian_matrix, seeded_rng};
use collapse_core::stats::ClassStats;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::campaign::{Campaign, Plan};
use crate::config::{echo, ExperimentConfig, MinimizeConfig, Overrides};
use crate::error::CliResult;
use crate::output::{num, OutputDir, Report};

pub struct Minimize;

impl Campaign for Minimize {
    fn name(&self) -> &'static str {
        "minimize"
    }

    fn about(&self) -> &'static str {
        "joint minimization from random starts vs the closed-form minimizer"
    }

    fn prepare(&self, cfg: &ExperimentConfig, overrides: Overrides) -> CliResult<Box<dyn Plan>> {
        let mut section: MinimizeConfig = cfg.section(self.name())?;
        if let Some(seed) = overrides.seed {
            section.seeds = vec![seed];
        }
        let params = section.params()?;
        Ok(Box::new(MinimizePlan { section, params }))
    }
}

struct MinimizePlan {
    section: MinimizeConfig,
    params: ModelParams,
}

/// Result of one random start.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeRow {
    pub seed: u64,
    pub objective: f64,
    pub target: f64,
    pub objective_gap: f64,
    pub gram_residual: f64,
    pub rho_numeric: f64,
    pub rho_error: f64,
    pub within_class: f64,
    /// Some(true/false) when c ≥ 1 and the minimizer is (0, 0)
    pub zero_solution: Option<bool>,
    pub iters: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub pass: bool,
}

pub const COLUMNS: [&str; 14] = [
    "seed",
    "c",
    "objective",
    "analytic_objective",
    "objective_gap",
    "gram_residual",
    "rho_numeric",
    "rho_error",
    "within_class_dev",
    "zero_solution",
    "iters",
    "grad_norm",
    "converged",
    "pass",
];

impl MinimizePlan {
    fn run_seed(&self, seed: u64, target: f64, rho: f64) -> CliResult<MinimizeRow> {
        let p = &self.params;
        let s = &self.section;
        let dims = p.dims();
        let mut rng = seeded_rng(seed);
        let w0 = WeightMatrix::new(gaussian_matrix(&mut rng, dims.classes, dims.feature_dim) * s.init_scale, dims)?;
        let h0 = gaussian_features(&mut rng, dims, s.init_scale);
        let cfg = JointConfig {
            max_iters: s.max_iters,
            grad_tol: s.grad_tol,
            ..JointConfig::default()
        };
        let r = minimize_joint(&w0, &h0, None, p, &cfg)?;
        let stats = ClassStats::from_features(&r.features);
        let means = &stats.class_means;
        let gram = means.transpose() * means;
        let gram_residual = max_abs(&(&gram - DMatrix::identity(dims.classes, dims.classes) * rho));
        let rho_numeric = gram.trace() / dims.classes as f64;
        let within_class = (0..dims.classes)
            .flat_map(|k| (0..dims.per_class).map(move |i| (k, i)))
            .map(|(k, i)| (r.features.sample(k, i) - means.column(k)).norm())
            .fold(0.0, f64::max);
        let objective_gap = (r.objective - target).abs() / target.abs();
        let zero_solution = (p.c() >= 1.0).then(|| {
            r.features.frobenius() <= s.gram_tol.sqrt() && r.weights.as_matrix().norm() <= s.gram_tol.sqrt()
        });
        let pass = r.converged
            && objective_gap <= s.objective_rel_tol
            && gram_residual <= s.gram_tol
            && (rho_numeric - rho).abs() <= s.gram_tol
            && within_class <= s.gram_tol
            && zero_solution != Some(false);
        Ok(MinimizeRow {
            seed,
            objective: r.objective,
            target,
            objective_gap,
            gram_residual,
            rho_numeric,
            rho_error: (rho_numeric - rho).abs(),
            within_class,
            zero_solution,
            iters: r.iters,
            grad_norm: r.grad_norm,
            converged: r.converged,
            pass,
        })
    }

    pub fn rows(&self) -> CliResult<Vec<MinimizeRow>> {
        let p = &self.params;
        let (target, rho) = if p.c() < 1.0 {
            let star = collapsed_minimizer(p, 0)?;
            (objective_plain(&star.weights, &star.features, p)?, star.rho)
        } else {
            // f(0, 0) = ‖Y‖²/(2Kn)
            (0.5, 0.0)
        };
        self.section
            .seeds
            .par_iter()
            .map(|&seed| self.run_seed(seed, target, rho))
            .collect()
    }
}

impl Plan for MinimizePlan {
    fn echo(&self) -> String {
        echo("minimize", &self.section)
    }

    fn execute(&self, out: &OutputDir) -> CliResult<Report> {
        let mut report = Report::new("minimize");
        let rows = self.rows()?;
        let c = self.params.c();
        if c >= 1.0 {
            report.note(format!("c = {c} >= 1: the global minimizer is (W, H) = (0, 0)"));
        }
        let records: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.seed.to_string(),
                    num(c),
                    num(r.objective),
                    num(r.target),
                    num(r.objective_gap),
                    num(r.gram_residual),
                    num(r.rho_numeric),
                    num(r.rho_error),
                    num(r.within_class),
                    r.zero_solution.map(|z| z.to_string()).unwrap_or_default(),
                    r.iters.to_string(),
                    num(r.grad_norm),
                    r.converged.to_string(),
                    r.pass.to_string(),
                ]
            })
            .collect();
        for r in rows.iter().filter(|r| !r.pass) {
            report.fail(format!(
                "seed {}: objective gap {:.3e}, Gram residual {:.3e}, rho error {:.3e}, converged {}",
                r.seed, r.objective_gap, r.gram_residual, r.rho_error, r.converged
            ));
        }
        report.files.push(out.write_csv("minimize.csv", &COLUMNS, &records)?);
        Ok(report)
    }
}
