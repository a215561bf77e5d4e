//! Seeded sampling used by tests, campaigns and the minimizer construction.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{Dims, FeatureMatrix};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix<R: rand::Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // Fill column-major so the draw order is independent of nalgebra internals.
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_vec(rows, cols, data)
}

/// Random features of the form `means ⊗ 1ᵀ + spread · noise`, the usual
/// "partially separated" input used by the experiments.
pub fn clustered_features<R: rand::Rng>(rng: &mut R, dims: Dims, spread: f64) -> FeatureMatrix {
    let means = gaussian_matrix(rng, dims.feature_dim, dims.classes);
    let noise = gaussian_matrix(rng, dims.feature_dim, dims.total_samples());
    let base = FeatureMatrix::from_class_means(&means, dims.per_class);
    FeatureMatrix::new(base.as_matrix() + noise * spread, dims)
        .expect("shape is correct by construction")
}

/// Unstructured standard-normal features.
pub fn gaussian_features<R: rand::Rng>(rng: &mut R, dims: Dims, scale: f64) -> FeatureMatrix {
    let m = gaussian_matrix(rng, dims.feature_dim, dims.total_samples()) * scale;
    FeatureMatrix::new(m, dims).expect("shape is correct by construction")
}
