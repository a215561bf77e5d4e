//! Class means and the within/between covariance family of a feature matrix.

use nalgebra::{DMatrix, DVector};

use crate::model::{Dims, FeatureMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub dims: Dims,
    /// `d × K`, column k is h̄ₖ
    pub class_means: DMatrix<f64>,
    pub global_mean: DVector<f64>,
    /// Σ_W = (1/Kn) Σ (h − h̄ₖ)(h − h̄ₖ)ᵀ
    pub within: DMatrix<f64>,
    /// Σ_B = (1/K) Σ (h̄ₖ − h̄_G)(h̄ₖ − h̄_G)ᵀ
    pub between: DMatrix<f64>,
    /// Σ̃_T = (1/Kn) H Hᵀ
    pub total_uncentered: DMatrix<f64>,
    /// Σ̃_B = (1/K) H̄ H̄ᵀ
    pub between_uncentered: DMatrix<f64>,
    /// (1/n) Σᵢ (h_{k,i} − h̄ₖ)(·)ᵀ for each class
    pub within_per_class: Vec<DMatrix<f64>>,
}

impl ClassStats {
    pub fn from_features(h: &FeatureMatrix) -> Self {
        let dims = h.dims();
        let (d, k, n) = (dims.feature_dim, dims.classes, dims.per_class);
        let hm = h.as_matrix();

        let mut class_means = DMatrix::zeros(d, k);
        for c in 0..k {
            let block = hm.columns(c * n, n);
            class_means.set_column(c, &(block.column_sum() / n as f64));
        }
        let global_mean = class_means.column_sum() / k as f64;

        let mut within = DMatrix::zeros(d, d);
        let mut within_per_class = Vec::with_capacity(k);
        for c in 0..k {
            let mut dev = hm.columns(c * n, n).into_owned();
            for mut col in dev.column_iter_mut() {
                col -= class_means.column(c);
            }
            let cov = &dev * dev.transpose();
            within += &cov;
            within_per_class.push(cov / n as f64);
        }
        within /= (k * n) as f64;

        let centered = centered_columns(&class_means, &global_mean);
        let between = &centered * centered.transpose() / k as f64;
        let total_uncentered = hm * hm.transpose() / (k * n) as f64;
        let between_uncentered = &class_means * class_means.transpose() / k as f64;

        Self {
            dims,
            class_means,
            global_mean,
            within,
            between,
            total_uncentered,
            between_uncentered,
            within_per_class,
        }
    }

    /// `H̄ − h̄_G 1ᵀ`
    pub fn centered_means(&self) -> DMatrix<f64> {
        centered_columns(&self.class_means, &self.global_mean)
    }

    pub fn trace_within(&self) -> f64 {
        self.within.trace()
    }

    pub fn trace_between(&self) -> f64 {
        self.between.trace()
    }
}

fn centered_columns(m: &DMatrix<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col -= v;
    }
    out
}

pub fn class_statistics(h: &FeatureMatrix) -> ClassStats {
    ClassStats::from_features(h)
}
