//! The loss along the central path `L(H) = f(W*(H), H)`, its gradient, the
//! induced covariance dynamics, and an RK4 integrator for `dH/dt = −Kn ∇L(H)`.

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{CollapseError, Result};
use crate::linalg::{spd_factor, symmetrize};
use crate::metrics::{compute_metrics, nc1_tilde, MetricReport, DEFAULT_PINV_TOL};
use crate::model::{objective_plain, optimal_weights, FeatureMatrix, ModelParams};
use crate::stats::ClassStats;

/// Above this many entries a flow sample keeps a digest instead of H.
pub const SNAPSHOT_LIMIT: usize = 10_000;

fn check_dims(h: &FeatureMatrix, p: &ModelParams) -> Result<()> {
    if h.dims() != p.dims() {
        return Err(CollapseError::Shape(format!(
            "features have dims {:?}, params have {:?}",
            h.dims(),
            p.dims()
        )));
    }
    Ok(())
}

/// `Σ̃_T + (λ_W/K) I`
fn shifted_total(stats: &ClassStats, p: &ModelParams) -> DMatrix<f64> {
    let d = stats.dims.feature_dim;
    &stats.total_uncentered + DMatrix::identity(d, d) * (p.lambda_w() / stats.dims.classes as f64)
}

fn shifted_within(stats: &ClassStats, p: &ModelParams) -> DMatrix<f64> {
    let d = stats.dims.feature_dim;
    &stats.within + DMatrix::identity(d, d) * (p.lambda_w() / stats.dims.classes as f64)
}

/// Closed-form central-path loss.
pub fn central_loss(h: &FeatureMatrix, p: &ModelParams) -> Result<f64> {
    check_dims(h, p)?;
    let stats = ClassStats::from_features(h);
    central_loss_from_stats(&stats, p)
}

fn central_loss_from_stats(stats: &ClassStats, p: &ModelParams) -> Result<f64> {
    let dims = stats.dims;
    let k = dims.classes as f64;
    let d = dims.feature_dim as f64;
    let chol = spd_factor(shifted_total(stats, p), "Sigma_T + lambda_W/K I")?;
    let ratio = chol.solve(&shifted_within(stats, p)).trace();
    Ok(ratio / (2.0 * k) + 0.5 * p.lambda_h() * stats.total_uncentered.trace() - (d - k) / (2.0 * k))
}

/// The plain objective evaluated at `(W*(H), H)`.
pub fn central_loss_direct(h: &FeatureMatrix, p: &ModelParams) -> Result<f64> {
    let w = optimal_weights(h, p)?;
    objective_plain(&w, h, p)
}

/// ∇L as a `d × Kn` matrix.
pub fn central_gradient(h: &FeatureMatrix, p: &ModelParams) -> Result<DMatrix<f64>> {
    check_dims(h, p)?;
    let stats = ClassStats::from_features(h);
    gradient_from_stats(h, &stats, p)
}

fn gradient_from_stats(h: &FeatureMatrix, stats: &ClassStats, p: &ModelParams) -> Result<DMatrix<f64>> {
    let dims = stats.dims;
    let k = dims.classes as f64;
    let n = dims.per_class as f64;
    let hm = h.as_matrix();
    let chol = spd_factor(shifted_total(stats, p), "Sigma_T + lambda_W/K I")?;

    let repeated = FeatureMatrix::from_class_means(&stats.class_means, dims.per_class);
    let deviation = hm - repeated.as_matrix();
    let first = chol.solve(&deviation);
    let a_inv_h = chol.solve(hm);
    let second = chol.solve(&(shifted_within(stats, p) * a_inv_h));
    Ok((first - second + hm * (p.lambda_h() * k)) / (k * k * n))
}

/// Time derivatives of `(Σ_B, Σ_W, Σ̃_T)` along the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceRates {
    pub between: DMatrix<f64>,
    pub within: DMatrix<f64>,
    pub total_uncentered: DMatrix<f64>,
}

pub fn covariance_rates(h: &FeatureMatrix, p: &ModelParams) -> Result<CovarianceRates> {
    check_dims(h, p)?;
    let stats = ClassStats::from_features(h);
    let d = stats.dims.feature_dim;
    let k = stats.dims.classes as f64;
    let lh = p.lambda_h();
    let chol = spd_factor(shifted_total(&stats, p), "Sigma_T + lambda_W/K I")?;
    // X A⁻¹ = (A⁻¹ Xᵀ)ᵀ for symmetric A
    let right_inv = |x: &DMatrix<f64>| chol.solve(&x.transpose()).transpose();
    let cb = right_inv(&stats.between);
    let cbt = right_inv(&stats.between_uncentered);
    let cw = right_inv(&stats.within);
    let eye = DMatrix::<f64>::identity(d, d);

    let between = (&cb * (&eye - &cbt) + (&eye - cbt.transpose()) * cb.transpose()) / k
        - &stats.between * (2.0 * lh);
    let within = -(&cw * &cbt + cbt.transpose() * cw.transpose()) / k - &stats.within * (2.0 * lh);
    let rest = &eye - &cbt - &cw;
    let total_uncentered = (&rest * &cbt + cbt.transpose() * rest.transpose()) / k
        - &stats.total_uncentered * (2.0 * lh);
    Ok(CovarianceRates {
        between: symmetrize(&between),
        within: symmetrize(&within),
        total_uncentered: symmetrize(&total_uncentered),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub t_end: f64,
    pub dt: f64,
    pub max_halvings: u32,
    pub record_every: usize,
    /// Attach a full MetricReport (with NC3 at W*(H_t)) to each sample.
    pub with_metrics: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            dt: 1e-3,
            max_halvings: 20,
            record_every: 1,
            with_metrics: false,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(CollapseError::InvalidParams(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(CollapseError::InvalidParams(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.t_end > 0.0 && self.dt > self.t_end {
            return Err(CollapseError::InvalidParams(format!(
                "dt = {} exceeds t_end = {}",
                self.dt, self.t_end
            )));
        }
        if self.record_every == 0 {
            return Err(CollapseError::InvalidParams("record_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot {
    Full(FeatureMatrix),
    /// hex sha256 of the column-major little-endian bytes of H
    Digest(String),
}

pub fn feature_digest(h: &FeatureMatrix) -> String {
    let mut hasher = Sha256::new();
    for x in h.as_matrix().iter() {
        hasher.update(x.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub step: usize,
    pub t: f64,
    pub trace_within: f64,
    pub trace_between: f64,
    /// None when all class means coincide
    pub nc1_tilde: Option<f64>,
    pub loss: f64,
    pub metrics: Option<MetricReport>,
    pub snapshot: Snapshot,
}

impl FlowSample {
    /// `e^{2λ_H t} tr Σ_W`
    pub fn scaled_within(&self, lambda_h: f64) -> f64 {
        (2.0 * lambda_h * self.t).exp() * self.trace_within
    }

    pub fn scaled_between(&self, lambda_h: f64) -> f64 {
        (2.0 * lambda_h * self.t).exp() * self.trace_between
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    pub samples: Vec<FlowSample>,
    pub final_features: FeatureMatrix,
    /// Largest number of halvings any macro step needed.
    pub max_halvings_used: u32,
}

/// Relative slack on the monotone decrease of `e^{2λ_H t} tr Σ_W`.
pub const MONOTONE_REL_TOL: f64 = 1e-9;

fn rk4_step(h: &DMatrix<f64>, dt: f64, p: &ModelParams) -> Result<DMatrix<f64>> {
    let dims = p.dims();
    let kn = dims.total_samples() as f64;
    let velocity = |x: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let f = FeatureMatrix::new(x.clone(), dims)?;
        Ok(central_gradient(&f, p)? * (-kn))
    };
    let k1 = velocity(h)?;
    let k2 = velocity(&(h + &k1 * (0.5 * dt)))?;
    let k3 = velocity(&(h + &k2 * (0.5 * dt)))?;
    let k4 = velocity(&(h + &k3 * dt))?;
    Ok(h + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

fn make_sample(
    step: usize,
    t: f64,
    h: &FeatureMatrix,
    p: &ModelParams,
    cfg: &FlowConfig,
) -> Result<FlowSample> {
    let stats = ClassStats::from_features(h);
    let metrics = if cfg.with_metrics {
        let w = optimal_weights(h, p)?;
        compute_metrics(&stats, Some(&w), DEFAULT_PINV_TOL).ok()
    } else {
        None
    };
    let snapshot = if h.dims().feature_len() <= SNAPSHOT_LIMIT {
        Snapshot::Full(h.clone())
    } else {
        Snapshot::Digest(feature_digest(h))
    };
    Ok(FlowSample {
        step,
        t,
        trace_within: stats.trace_within(),
        trace_between: stats.trace_between(),
        nc1_tilde: nc1_tilde(&stats).ok(),
        loss: central_loss_from_stats(&stats, p)?,
        metrics,
        snapshot,
    })
}

/// Integrates `dH/dt = −Kn ∇L(H)` with fixed-step RK4.
///
/// Each step of size `dt` is checked against the monotone decrease of
/// `e^{2λ_H t} tr Σ_W`; on violation it is redone as `2^h` substeps of
/// `dt / 2^h`, up to `max_halvings`.
pub fn flow_integrate(h0: &FeatureMatrix, p: &ModelParams, cfg: &FlowConfig) -> Result<FlowTrace> {
    check_dims(h0, p)?;
    cfg.validate()?;
    let lh = p.lambda_h();
    let mut h = h0.as_matrix().clone();
    let mut t = 0.0f64;
    let mut step = 0usize;
    let mut samples = vec![make_sample(0, 0.0, h0, p, cfg)?];
    let mut max_used = 0u32;
    let stats0 = ClassStats::from_features(h0);
    let mut scaled_w = stats0.trace_within();

    let n_steps = if cfg.t_end == 0.0 {
        0
    } else {
        (cfg.t_end / cfg.dt - 1e-9).ceil() as usize
    };

    while step < n_steps {
        let t_next = if step + 1 == n_steps {
            cfg.t_end
        } else {
            (step + 1) as f64 * cfg.dt
        };
        let big = t_next - t;
        let mut halvings = 0u32;
        let (h_new, w_new) = loop {
            let sub = 1usize << halvings;
            let small = big / sub as f64;
            let mut cand = h.clone();
            for _ in 0..sub {
                cand = rk4_step(&cand, small, p)?;
            }
            let f = FeatureMatrix::new(cand.clone(), p.dims())?;
            let stats = ClassStats::from_features(&f);
            let new_scaled = (2.0 * lh * t_next).exp() * stats.trace_within();
            let slack = MONOTONE_REL_TOL * scaled_w + 1e-14 * stats.total_uncentered.trace();
            if new_scaled <= scaled_w + slack {
                break (cand, new_scaled);
            }
            halvings += 1;
            if halvings > cfg.max_halvings {
                return Err(CollapseError::StepCollapse {
                    t,
                    halvings: cfg.max_halvings,
                });
            }
        };
        max_used = max_used.max(halvings);
        h = h_new;
        scaled_w = w_new;
        t = t_next;
        step += 1;
        if step.is_multiple_of(cfg.record_every) || step == n_steps {
            let f = FeatureMatrix::new(h.clone(), p.dims())?;
            samples.push(make_sample(step, t, &f, p, cfg)?);
        }
    }

    Ok(FlowTrace {
        samples,
        final_features: FeatureMatrix::new(h, p.dims())?,
        max_halvings_used: max_used,
    })
}

/// Least-squares slope of `ln tr Σ_W` against t over the recorded samples.
pub fn within_decay_rate(trace: &FlowTrace) -> Option<f64> {
    let pts: Vec<(f64, f64)> = trace
        .samples
        .iter()
        .filter(|s| s.trace_within > 0.0)
        .map(|s| (s.t, s.trace_within.ln()))
        .collect();
    crate::linalg::least_squares_slope(&pts)
}

/// Monotonicity violations along a trace: the three properties the flow
/// must satisfy, each reported as the list of offending sample indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonotoneReport {
    pub nc1_not_decreasing: Vec<usize>,
    pub scaled_within_increasing: Vec<usize>,
    pub scaled_between_not_increasing: Vec<usize>,
}

impl MonotoneReport {
    pub fn ok(&self) -> bool {
        self.nc1_not_decreasing.is_empty()
            && self.scaled_within_increasing.is_empty()
            && self.scaled_between_not_increasing.is_empty()
    }
}

/// NC1 decrease is only required while the previous value exceeds this.
pub const NC1_FLOOR: f64 = 1e-12;

pub fn check_monotone(trace: &FlowTrace, lambda_h: f64, tol: f64) -> MonotoneReport {
    let mut rep = MonotoneReport::default();
    for (i, pair) in trace.samples.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        if let (Some(x), Some(y)) = (a.nc1_tilde, b.nc1_tilde) {
            if x > NC1_FLOOR && y >= x {
                rep.nc1_not_decreasing.push(i + 1);
            }
        }
        let (wa, wb) = (a.scaled_within(lambda_h), b.scaled_within(lambda_h));
        if wb > wa * (1.0 + tol) + 1e-14 {
            rep.scaled_within_increasing.push(i + 1);
        }
        if a.trace_between > 0.0 && b.scaled_between(lambda_h) <= a.scaled_between(lambda_h) {
            rep.scaled_between_not_increasing.push(i + 1);
        }
    }
    rep
}
