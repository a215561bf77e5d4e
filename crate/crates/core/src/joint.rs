//! Direct numeric minimization of the plain (or proximal) objective jointly
//! over `(W, H)`. Serves as an independent oracle for the analytic minimizer.

use nalgebra::DMatrix;

use crate::error::{CollapseError, Result};
use crate::model::{objective_gradients, objective_plain, objective_prox, FeatureMatrix, ModelParams, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointConfig {
    pub max_iters: usize,
    /// Stop when the scaled gradient `(K ∇_W, Kn ∇_H)` has Frobenius norm below this.
    pub grad_tol: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            max_iters: 200_000,
            grad_tol: 1e-9,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JointResult {
    pub weights: WeightMatrix,
    pub features: FeatureMatrix,
    pub objective: f64,
    pub iters: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Gradient descent with Armijo backtracking on `f(W, H)` (or the proximal
/// objective when `anchor` is given). The search direction rescales the W and
/// H gradients by K and Kn, which puts both blocks on the same footing.
pub fn minimize_joint(
    w0: &WeightMatrix,
    h0: &FeatureMatrix,
    anchor: Option<&FeatureMatrix>,
    p: &ModelParams,
    cfg: &JointConfig,
) -> Result<JointResult> {
    let dims = p.dims();
    let k = dims.classes as f64;
    let kn = dims.total_samples() as f64;
    let eval = |w: &WeightMatrix, h: &FeatureMatrix| -> Result<f64> {
        match anchor {
            Some(a) => objective_prox(w, h, a, p),
            None => objective_plain(w, h, p),
        }
    };

    let mut w = w0.clone();
    let mut h = h0.clone();
    let mut f = eval(&w, &h)?;
    let mut step = 1.0f64;
    let mut iters = 0;
    let mut grad_norm = f64::INFINITY;

    while iters < cfg.max_iters {
        let (gw, gh) = objective_gradients(&w, &h, anchor, p)?;
        let dw: DMatrix<f64> = gw * k;
        let dh: DMatrix<f64> = gh * kn;
        grad_norm = (dw.norm_squared() + dh.norm_squared()).sqrt();
        if grad_norm <= cfg.grad_tol {
            break;
        }
        // directional derivative along −(dw, dh) in the Euclidean metric
        let slope = (dw.dot(&(&dw / k)) + dh.dot(&(&dh / kn))).max(0.0);
        let mut t = (step * 2.0).min(1.0);
        let mut accepted = false;
        for _ in 0..60 {
            let wn = WeightMatrix::new(w.as_matrix() - &dw * t, dims)?;
            let hn = FeatureMatrix::new(h.as_matrix() - &dh * t, dims)?;
            let fn_ = eval(&wn, &hn)?;
            let accept = if cfg.sufficient_decrease * t * slope < 4.0 * f64::EPSILON * f.abs().max(1.0) {
                // Below the float resolution of f the Armijo test is decided by
                // rounding. Require gᵀSg (S the block scaling) to shrink instead;
                // unlike ‖Sg‖ it decreases along −Sg for small steps.
                let (gw2, gh2) = objective_gradients(&wn, &hn, anchor, p)?;
                gw2.norm_squared() * k + gh2.norm_squared() * kn < slope
            } else {
                fn_ <= f - cfg.sufficient_decrease * t * slope
            };
            if accept {
                w = wn;
                h = hn;
                f = fn_;
                step = t;
                accepted = true;
                break;
            }
            t *= cfg.shrink;
        }
        iters += 1;
        if !accepted {
            // No representable decrease left along the gradient.
            break;
        }
    }

    Ok(JointResult {
        converged: grad_norm <= cfg.grad_tol,
        weights: w,
        features: h,
        objective: f,
        iters,
        grad_norm,
    })
}

/// Runs [`minimize_joint`] and errors if the stopping test was not met.
pub fn minimize_joint_strict(
    w0: &WeightMatrix,
    h0: &FeatureMatrix,
    anchor: Option<&FeatureMatrix>,
    p: &ModelParams,
    cfg: &JointConfig,
) -> Result<JointResult> {
    let r = minimize_joint(w0, h0, anchor, p, cfg)?;
    if !r.converged {
        return Err(CollapseError::Precondition(format!(
            "joint minimization stalled after {} iterations with scaled gradient {:.3e}",
            r.iters, r.grad_norm
        )));
    }
    Ok(r)
}
