//! Solver for the proximal model reduced to H,
//! `φ(H) = L(H) + β/(2Kn) ‖H − H₀‖²`, plus the checks built on it.

use nalgebra::DMatrix;

use crate::central_path::{central_gradient, central_loss};
use crate::error::{CollapseError, Result};
use crate::metrics::{compute_metrics, MetricReport, DEFAULT_PINV_TOL};
use crate::model::{collapsed_minimizer, optimal_weights, FeatureMatrix, ModelParams, WeightMatrix};
use crate::stats::ClassStats;

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    FromH0,
    FromCollapsed { seed: u64 },
    Custom(FeatureMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    /// absolute tolerance on ‖∇φ‖_F
    pub grad_tol: f64,
    pub max_iters: usize,
    pub init: Init,
    pub shrink: f64,
    pub sufficient_decrease: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            max_iters: 100_000,
            init: Init::FromH0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(CollapseError::InvalidParams(format!(
                "grad_tol must be positive, got {}",
                self.grad_tol
            )));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(CollapseError::InvalidParams(format!(
                "shrink must lie in (0, 1), got {}",
                self.shrink
            )));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(CollapseError::InvalidParams(format!(
                "sufficient_decrease must lie in (0, 1), got {}",
                self.sufficient_decrease
            )));
        }
        if self.max_iters == 0 {
            return Err(CollapseError::InvalidParams("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxSolution {
    pub features: FeatureMatrix,
    pub weights: WeightMatrix,
    /// ‖H* − H₀ + (Kn/β) ∇L(H*)‖_F
    pub residual: f64,
    /// ‖∇φ(H*)‖_F
    pub grad_norm: f64,
    pub iters: usize,
    /// φ(H*), equal to the proximal objective at (W*(H*), H*)
    pub objective: f64,
    pub converged: bool,
}

fn phi(h: &FeatureMatrix, h0: &FeatureMatrix, p: &ModelParams) -> Result<f64> {
    let dist = (h.as_matrix() - h0.as_matrix()).norm_squared();
    Ok(central_loss(h, p)? + 0.5 * p.beta() * p.inv_kn() * dist)
}

fn phi_gradient(h: &FeatureMatrix, h0: &FeatureMatrix, p: &ModelParams) -> Result<DMatrix<f64>> {
    Ok(central_gradient(h, p)? + (h.as_matrix() - h0.as_matrix()) * (p.beta() * p.inv_kn()))
}

/// Minimizes φ by gradient descent with Armijo backtracking.
pub fn solve_prox(h0: &FeatureMatrix, p: &ModelParams, cfg: &SolveConfig) -> Result<ProxSolution> {
    cfg.validate()?;
    let dims = p.dims();
    if h0.dims() != dims {
        return Err(CollapseError::Shape(format!(
            "H0 has dims {:?}, params have {:?}",
            h0.dims(),
            dims
        )));
    }
    let mut h = match &cfg.init {
        Init::FromH0 => h0.clone(),
        Init::FromCollapsed { seed } => collapsed_minimizer(p, *seed)?.features,
        Init::Custom(h) => {
            if h.dims() != dims {
                return Err(CollapseError::Shape("custom init has wrong dims".into()));
            }
            h.clone()
        }
    };
    let base_step = 1.0 / (p.beta() * p.inv_kn());
    let mut f = phi(&h, h0, p)?;
    let mut g = phi_gradient(&h, h0, p)?;
    let mut gnorm = g.norm();
    let mut step = base_step;
    let mut iters = 0;

    while gnorm > cfg.grad_tol && iters < cfg.max_iters {
        let slope = gnorm * gnorm;
        let mut t = (step * 2.0).min(4.0 * base_step);
        let mut next = None;
        for _ in 0..60 {
            let cand = FeatureMatrix::new(h.as_matrix() - &g * t, dims)?;
            let fc = phi(&cand, h0, p)?;
            if fc <= f - cfg.sufficient_decrease * t * slope {
                next = Some((cand, fc, None));
                break;
            }
            // Near the optimum the predicted decrease drops below the float
            // resolution of φ; fall back to gradient-norm decrease.
            let resolution = 4.0 * f64::EPSILON * f.abs().max(1.0);
            if cfg.sufficient_decrease * t * slope < resolution {
                let gc = phi_gradient(&cand, h0, p)?;
                if gc.norm() < gnorm {
                    next = Some((cand, fc, Some(gc)));
                    break;
                }
            }
            t *= cfg.shrink;
        }
        iters += 1;
        match next {
            Some((cand, fc, gc)) => {
                h = cand;
                f = fc;
                step = t;
                g = match gc {
                    Some(gc) => gc,
                    None => phi_gradient(&h, h0, p)?,
                };
                gnorm = g.norm();
            }
            None => break,
        }
    }

    let sol = finish(h, h0, p, gnorm, iters, gnorm <= cfg.grad_tol)?;
    if !sol.converged {
        return Err(CollapseError::NoConvergence {
            iters,
            grad_norm: gnorm,
            best: Box::new(sol),
        });
    }
    Ok(sol)
}

fn finish(
    h: FeatureMatrix,
    h0: &FeatureMatrix,
    p: &ModelParams,
    grad_norm: f64,
    iters: usize,
    converged: bool,
) -> Result<ProxSolution> {
    let kn = p.dims().total_samples() as f64;
    let grad_l = central_gradient(&h, p)?;
    let residual = (h.as_matrix() - h0.as_matrix() + grad_l * (kn / p.beta())).norm();
    Ok(ProxSolution {
        weights: optimal_weights(&h, p)?,
        objective: phi(&h, h0, p)?,
        features: h,
        residual,
        grad_norm,
        iters,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImplicitStepReport {
    /// ‖β(H* − H₀) + Kn ∇L(H*)‖_F
    pub absolute: f64,
    /// absolute / (Kn (1 + ‖∇L(H*)‖_F))
    pub relative: f64,
    /// ‖H* − H₀‖_F
    pub displacement: f64,
}

pub fn implicit_step_check(h0: &FeatureMatrix, p: &ModelParams, sol: &ProxSolution) -> Result<ImplicitStepReport> {
    if h0.dims() != sol.features.dims() {
        return Err(CollapseError::Shape("solution and H0 differ in shape".into()));
    }
    let kn = p.dims().total_samples() as f64;
    let grad_l = central_gradient(&sol.features, p)?;
    let diff = sol.features.as_matrix() - h0.as_matrix();
    let absolute = (&diff * p.beta() + &grad_l * kn).norm();
    Ok(ImplicitStepReport {
        absolute,
        relative: absolute / (kn * (1.0 + grad_l.norm())),
        displacement: diff.norm(),
    })
}

/// The explicit step `H₀ − (Kn/β) ∇L(H₀)`.
pub fn euler_predictor(h0: &FeatureMatrix, p: &ModelParams) -> Result<FeatureMatrix> {
    let kn = p.dims().total_samples() as f64;
    let g = central_gradient(h0, p)?;
    FeatureMatrix::new(h0.as_matrix() - g * (kn / p.beta()), p.dims())
}

/// ‖euler_predictor(H₀) − H*‖_F
pub fn euler_predictor_error(h0: &FeatureMatrix, p: &ModelParams, sol: &ProxSolution) -> Result<f64> {
    let pred = euler_predictor(h0, p)?;
    Ok((pred.as_matrix() - sol.features.as_matrix()).norm())
}

/// `M = (1/Kn)(3/λ_W + λ_H)`, the growth constant in ‖∇L(H)‖ ≤ M‖H‖.
pub fn gradient_growth_constant(p: &ModelParams) -> f64 {
    p.inv_kn() * (3.0 / p.lambda_w() + p.lambda_h())
}

/// `(β/(nKM) − 1)⁻¹ ‖H₀‖`; None when β ≤ nKM and the bound is vacuous.
pub fn displacement_bound(h0: &FeatureMatrix, p: &ModelParams) -> Option<f64> {
    let kn = p.dims().total_samples() as f64;
    let ratio = p.beta() / (kn * gradient_growth_constant(p));
    (ratio > 1.0).then(|| h0.frobenius() / (ratio - 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    /// (1 − 11λ_H/β)⁻¹
    pub map_constant: f64,
    /// 11λ_H/(Kn)
    pub gradient_constant: f64,
    pub pairs: usize,
    pub map_violations: usize,
    pub gradient_violations: usize,
    pub max_map_ratio: f64,
    pub max_gradient_ratio: f64,
}

impl LipschitzReport {
    pub fn ok(&self) -> bool {
        self.map_violations == 0 && self.gradient_violations == 0
    }
}

/// Checks the Lipschitz bounds of `H₀ ↦ H*` and of ∇L over the given pairs.
/// The gradient bound is sampled on both the input pairs and their solutions.
pub fn lipschitz_map_check(
    pairs: &[(FeatureMatrix, FeatureMatrix)],
    p: &ModelParams,
    cfg: &SolveConfig,
) -> Result<LipschitzReport> {
    let lh = p.lambda_h();
    if !(p.beta() > 11.0 * lh) {
        return Err(CollapseError::Precondition(format!(
            "need beta > 11 lambda_h, got beta = {}, lambda_h = {lh}",
            p.beta()
        )));
    }
    if !(lh * p.lambda_w() < 1.0) {
        return Err(CollapseError::Precondition("need lambda_w * lambda_h < 1".into()));
    }
    let map_constant = 1.0 / (1.0 - 11.0 * lh / p.beta());
    let gradient_constant = 11.0 * lh * p.inv_kn();
    let mut rep = LipschitzReport {
        map_constant,
        gradient_constant,
        pairs: pairs.len(),
        map_violations: 0,
        gradient_violations: 0,
        max_map_ratio: 0.0,
        max_gradient_ratio: 0.0,
    };
    let grad_check = |a: &FeatureMatrix, b: &FeatureMatrix, rep: &mut LipschitzReport| -> Result<()> {
        let dist = (a.as_matrix() - b.as_matrix()).norm();
        let gdiff = (central_gradient(a, p)? - central_gradient(b, p)?).norm();
        if dist > 0.0 {
            rep.max_gradient_ratio = rep.max_gradient_ratio.max(gdiff / dist);
        }
        if gdiff > gradient_constant * dist * (1.0 + 1e-12) + 1e-15 {
            rep.gradient_violations += 1;
        }
        Ok(())
    };
    for (a, b) in pairs {
        let sa = solve_prox(a, p, cfg)?;
        let sb = solve_prox(b, p, cfg)?;
        let din = (a.as_matrix() - b.as_matrix()).norm();
        let dout = (sa.features.as_matrix() - sb.features.as_matrix()).norm();
        if din > 0.0 {
            rep.max_map_ratio = rep.max_map_ratio.max(dout / din);
        }
        if dout > map_constant * din + 2.0 * cfg.grad_tol {
            rep.map_violations += 1;
        }
        grad_check(a, b, &mut rep)?;
        grad_check(&sa.features, &sb.features, &mut rep)?;
    }
    Ok(rep)
}

/// Repeated proximal solves `H_{ℓ+1} = solve_prox(H_ℓ)`; returns the metrics of
/// `H_0, …, H_depth` (NC3 evaluated with W*(H_ℓ)).
pub fn layerwise_stack(
    h0: &FeatureMatrix,
    p: &ModelParams,
    depth: usize,
    cfg: &SolveConfig,
) -> Result<Vec<MetricReport>> {
    let layer_metrics = |h: &FeatureMatrix, layer: usize| -> Result<MetricReport> {
        let w = optimal_weights(h, p)?;
        compute_metrics(&ClassStats::from_features(h), Some(&w), DEFAULT_PINV_TOL).map_err(|e| {
            CollapseError::Layer {
                layer,
                source: Box::new(e),
            }
        })
    };
    let mut reports = vec![layer_metrics(h0, 0)?];
    let mut h = h0.clone();
    for layer in 1..=depth {
        let sol = solve_prox(&h, p, cfg).map_err(|e| CollapseError::Layer {
            layer,
            source: Box::new(e),
        })?;
        h = sol.features;
        reports.push(layer_metrics(&h, layer)?);
    }
    Ok(reports)
}
