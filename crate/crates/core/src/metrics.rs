//! Neural-collapse distance metrics.

use nalgebra::{DMatrix, DVector};

use crate::error::{CollapseError, Result};
use crate::linalg::pinv_symmetric;
use crate::model::WeightMatrix;
use crate::stats::ClassStats;

pub const DEFAULT_PINV_TOL: f64 = 1e-10;

/// Traces below this are treated as zero.
const DEGENERATE_EPS: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub nc1_tilde: f64,
    pub nc1_fisher: f64,
    pub nc1_per_class: DVector<f64>,
    pub nc2: f64,
    pub nc3: Option<f64>,
    pub trace_within: f64,
    pub trace_between: f64,
}

pub fn nc1_tilde(stats: &ClassStats) -> Result<f64> {
    let tb = stats.trace_between();
    if tb <= DEGENERATE_EPS {
        return Err(CollapseError::DegenerateStats(
            "tr(Sigma_B) is zero: all class means coincide".into(),
        ));
    }
    Ok(stats.trace_within() / tb)
}

fn between_pinv(stats: &ClassStats, pinv_tol: f64) -> Result<DMatrix<f64>> {
    if !(pinv_tol > 0.0) {
        return Err(CollapseError::InvalidParams(format!(
            "pinv_tol must be positive, got {pinv_tol}"
        )));
    }
    if stats.between.iter().all(|x| *x == 0.0) || stats.trace_between() <= DEGENERATE_EPS {
        return Err(CollapseError::DegenerateStats("Sigma_B is zero".into()));
    }
    Ok(pinv_symmetric(&stats.between, pinv_tol))
}

/// `(1/K) tr(Σ_W Σ_B†)`
pub fn nc1_fisher(stats: &ClassStats, pinv_tol: f64) -> Result<f64> {
    let pinv = between_pinv(stats, pinv_tol)?;
    Ok((&stats.within * pinv).trace() / stats.dims.classes as f64)
}

/// Per-class split of [`nc1_fisher`]; the entries average to it.
pub fn nc1_per_class(stats: &ClassStats, pinv_tol: f64) -> Result<DVector<f64>> {
    let pinv = between_pinv(stats, pinv_tol)?;
    let k = stats.dims.classes as f64;
    Ok(DVector::from_iterator(
        stats.dims.classes,
        stats
            .within_per_class
            .iter()
            .map(|cov| (cov * &pinv).trace() / k),
    ))
}

/// Normalized centered identity `(I − 11ᵀ/K)/√(K−1)`.
fn simplex_etf(k: usize) -> DMatrix<f64> {
    let kf = k as f64;
    (DMatrix::identity(k, k) - DMatrix::from_element(k, k, 1.0 / kf)) / (kf - 1.0).sqrt()
}

fn distance_to_etf(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let norm = m.norm();
    if norm <= DEGENERATE_EPS {
        return Err(CollapseError::DegenerateStats(format!("{what} is zero")));
    }
    Ok((m / norm - simplex_etf(m.nrows())).norm())
}

pub fn nc2(stats: &ClassStats) -> Result<f64> {
    let m = stats.centered_means();
    distance_to_etf(&(m.transpose() * &m), "centered Gram of class means")
}

pub fn nc3(w: &WeightMatrix, stats: &ClassStats) -> Result<f64> {
    let wm = w.as_matrix();
    if wm.shape() != (stats.dims.classes, stats.dims.feature_dim) {
        return Err(CollapseError::Shape(format!(
            "weights must be {}x{}, got {}x{}",
            stats.dims.classes,
            stats.dims.feature_dim,
            wm.nrows(),
            wm.ncols()
        )));
    }
    distance_to_etf(&(wm * stats.centered_means()), "W (H_bar - h_G 1^T)")
}

pub fn compute_metrics(
    stats: &ClassStats,
    w: Option<&WeightMatrix>,
    pinv_tol: f64,
) -> Result<MetricReport> {
    let nc3 = match w {
        Some(w) => Some(nc3(w, stats)?),
        None => None,
    };
    Ok(MetricReport {
        nc1_tilde: nc1_tilde(stats)?,
        nc1_fisher: nc1_fisher(stats, pinv_tol)?,
        nc1_per_class: nc1_per_class(stats, pinv_tol)?,
        nc2: nc2(stats)?,
        nc3,
        trace_within: stats.trace_within(),
        trace_between: stats.trace_between(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{collapsed_minimizer, Dims, FeatureMatrix, ModelParams};
    use crate::random::{clustered_features, gaussian_matrix, seeded_rng};

    fn hand() -> ClassStats {
        let dims = Dims::new(2, 2, 1).unwrap();
        let h = FeatureMatrix::new(DMatrix::from_row_slice(1, 4, &[1.0, 3.0, -1.0, -3.0]), dims).unwrap();
        ClassStats::from_features(&h)
    }

    fn collapsed() -> (WeightMatrix, ClassStats) {
        let p = ModelParams::new(Dims::new(4, 3, 6).unwrap(), 2.0, 0.125, 1.0).unwrap();
        let m = collapsed_minimizer(&p, 5).unwrap();
        (m.weights, ClassStats::from_features(&m.features))
    }

    #[test]
    fn hand_values() {
        let s = hand();
        assert!((nc1_tilde(&s).unwrap() - 0.25).abs() < 1e-15);
        assert!((nc1_fisher(&s, DEFAULT_PINV_TOL).unwrap() - 0.125).abs() < 1e-15);
        let pc = nc1_per_class(&s, DEFAULT_PINV_TOL).unwrap();
        assert!((pc[0] - 0.125).abs() < 1e-15 && (pc[1] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn collapsed_values_vanish() {
        let (w, s) = collapsed();
        // class means are sums of equal columns, exact up to the last bit
        assert!(nc1_tilde(&s).unwrap() < 1e-28);
        assert!(nc1_fisher(&s, DEFAULT_PINV_TOL).unwrap() < 1e-28);
        assert!(nc1_per_class(&s, DEFAULT_PINV_TOL).unwrap().norm() < 1e-28);
        assert!(nc2(&s).unwrap() < 1e-10);
        assert!(nc3(&w, &s).unwrap() < 1e-10);
        let w5 = WeightMatrix::new(w.as_matrix() * 5.0, s.dims).unwrap();
        assert!((nc3(&w5, &s).unwrap() - nc3(&w, &s).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn zero_features_are_degenerate() {
        let s = ClassStats::from_features(&FeatureMatrix::zeros(Dims::new(2, 2, 3).unwrap()));
        assert!(matches!(nc1_tilde(&s), Err(CollapseError::DegenerateStats(_))));
        assert!(matches!(nc1_fisher(&s, 1e-10), Err(CollapseError::DegenerateStats(_))));
        assert!(matches!(nc2(&s), Err(CollapseError::DegenerateStats(_))));
    }

    #[test]
    fn identical_means_degenerate_for_nc2() {
        // Two identical means center to zero, so the centered Gram vanishes.
        let means = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let h = FeatureMatrix::from_class_means(&means, 1);
        let s = ClassStats::from_features(&h);
        assert!(matches!(nc2(&s), Err(CollapseError::DegenerateStats(_))));
    }

    #[test]
    fn two_classes_always_etf() {
        let mut rng = seeded_rng(4);
        let dims = Dims::new(2, 3, 4).unwrap();
        let s = ClassStats::from_features(&clustered_features(&mut rng, dims, 0.3));
        assert!(nc2(&s).unwrap() < 1e-12);
    }

    #[test]
    fn rank_deficient_fisher_matches_svd_oracle() {
        // d = 3, K = 2: Sigma_B has rank 1.
        let mut rng = seeded_rng(6);
        let dims = Dims::new(2, 3, 3).unwrap();
        let h = clustered_features(&mut rng, dims, 0.5);
        let s = ClassStats::from_features(&h);
        let svd = s.between.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let mut pinv = DMatrix::zeros(3, 3);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        for i in 0..3 {
            let sv = svd.singular_values[i];
            if sv > 1e-10 * smax {
                pinv += vt.row(i).transpose() * u.column(i).transpose() / sv;
            }
        }
        let expected = (&s.within * pinv).trace() / 2.0;
        let got = nc1_fisher(&s, DEFAULT_PINV_TOL).unwrap();
        assert!((got - expected).abs() < 1e-12 * (1.0 + expected));
    }

    #[test]
    fn noisy_class_dominates_per_class() {
        let p = ModelParams::new(Dims::new(4, 3, 6).unwrap(), 2.0, 0.125, 1.0).unwrap();
        let m = collapsed_minimizer(&p, 5).unwrap();
        let mut rng = seeded_rng(9);
        let mut hm = m.features.as_matrix().clone();
        let noise = gaussian_matrix(&mut rng, 6, 3) * 0.1;
        let mut block = hm.columns_mut(3, 3);
        block += &noise;
        let h = FeatureMatrix::new(hm, p.dims()).unwrap();
        let s = ClassStats::from_features(&h);
        let pc = nc1_per_class(&s, DEFAULT_PINV_TOL).unwrap();
        assert!(pc[1] > 0.0);
        for k in [0, 2, 3] {
            assert!(pc[1] > pc[k]);
        }
        let mean = pc.mean();
        assert!((mean - nc1_fisher(&s, DEFAULT_PINV_TOL).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn nc2_matches_scalar_loop() {
        let mut rng = seeded_rng(13);
        let dims = Dims::new(3, 2, 4).unwrap();
        let h = clustered_features(&mut rng, dims, 0.2);
        let s = ClassStats::from_features(&h);
        let (d, k) = (4, 3);
        let mut g = [[0.0f64; 3]; 3];
        for a in 0..k {
            for b in 0..k {
                for r in 0..d {
                    g[a][b] += (s.class_means[(r, a)] - s.global_mean[r]) * (s.class_means[(r, b)] - s.global_mean[r]);
                }
            }
        }
        let norm: f64 = g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        let mut dist = 0.0;
        for a in 0..k {
            for b in 0..k {
                let target = (if a == b { 1.0 } else { 0.0 } - 1.0 / 3.0) / 2f64.sqrt();
                dist += (g[a][b] / norm - target).powi(2);
            }
        }
        assert!((nc2(&s).unwrap() - dist.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn nc3_permuted_weights_match_oracle() {
        let p = ModelParams::new(Dims::new(3, 2, 5).unwrap(), 2.0, 0.125, 1.0).unwrap();
        let m = collapsed_minimizer(&p, 2).unwrap();
        let s = ClassStats::from_features(&m.features);
        let wstar = m.weights.as_matrix();
        let mut wp = DMatrix::zeros(3, 5);
        wp.set_row(0, &wstar.row(1));
        wp.set_row(1, &wstar.row(0));
        let w = WeightMatrix::new(wp.clone(), p.dims()).unwrap();
        let prod = &wp * s.centered_means();
        let normalized = &prod / prod.norm();
        let etf = (DMatrix::identity(3, 3) - DMatrix::from_element(3, 3, 1.0 / 3.0)) / 2f64.sqrt();
        let expected = (normalized - etf).norm();
        assert!((nc3(&w, &s).unwrap() - expected).abs() < 1e-14);
        assert!(expected > 0.1);
    }
}
