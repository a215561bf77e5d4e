//! Domain types for the regularized unconstrained-features model, its plain
//! and proximal objectives, closed-form optimal weights, and the analytic
//! collapsed minimizer.
//!
//! Features are stored as a `d × (K·n)` matrix whose column `k·n + i`
//! (zero-based) holds sample `i` of class `k`. The grouping is positional;
//! nothing else records which class a column belongs to.

use nalgebra::{DMatrix, DVector};

use crate::error::{CollapseError, Result};
use crate::linalg::{max_abs, spd_factor};
use crate::random::{gaussian_matrix, seeded_rng};
use crate::stats::ClassStats;

/// Problem dimensions: `classes` (K), samples per class (n), feature dimension (d).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub classes: usize,
    pub per_class: usize,
    pub feature_dim: usize,
}

impl Dims {
    pub fn new(classes: usize, per_class: usize, feature_dim: usize) -> Result<Self> {
        if classes == 0 || per_class == 0 {
            return Err(CollapseError::InvalidParams(format!(
                "need K >= 1 and n >= 1, got K = {classes}, n = {per_class}"
            )));
        }
        if feature_dim == 0 {
            return Err(CollapseError::InvalidParams("need d >= 1".into()));
        }
        Ok(Self {
            classes,
            per_class,
            feature_dim,
        })
    }

    /// K·n
    pub fn total_samples(&self) -> usize {
        self.classes * self.per_class
    }

    /// d·n·K, the length of `vec(H)`.
    pub fn feature_len(&self) -> usize {
        self.feature_dim * self.total_samples()
    }

    pub fn column_of(&self, class: usize, sample: usize) -> usize {
        class * self.per_class + sample
    }
}

/// Dimensions plus the three regularization weights of the proximal model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    dims: Dims,
    lambda_w: f64,
    lambda_h: f64,
    beta: f64,
}

impl ModelParams {
    pub fn new(dims: Dims, lambda_w: f64, lambda_h: f64, beta: f64) -> Result<Self> {
        if dims.classes < 2 {
            return Err(CollapseError::InvalidParams(format!(
                "the model needs K >= 2 classes, got {}",
                dims.classes
            )));
        }
        if dims.feature_dim < dims.classes {
            return Err(CollapseError::InvalidParams(format!(
                "the model needs d >= K, got d = {}, K = {}",
                dims.feature_dim, dims.classes
            )));
        }
        if !(lambda_w.is_finite() && lambda_w > 0.0) {
            return Err(CollapseError::InvalidParams(format!(
                "lambda_w must be positive, got {lambda_w}"
            )));
        }
        if !(lambda_h.is_finite() && lambda_h >= 0.0) {
            return Err(CollapseError::InvalidParams(format!(
                "lambda_h must be nonnegative, got {lambda_h}"
            )));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(CollapseError::InvalidParams(format!(
                "beta must be positive, got {beta}"
            )));
        }
        Ok(Self {
            dims,
            lambda_w,
            lambda_h,
            beta,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn lambda_w(&self) -> f64 {
        self.lambda_w
    }
    pub fn lambda_h(&self) -> f64 {
        self.lambda_h
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `c = sqrt(lambda_h * lambda_w)`, always derived from the current weights.
    pub fn c(&self) -> f64 {
        (self.lambda_h * self.lambda_w).sqrt()
    }

    /// Squared norm of each collapsed class mean, `(1 - c) sqrt(lambda_w / lambda_h)`.
    pub fn rho(&self) -> Result<f64> {
        self.check_collapsible()?;
        Ok((1.0 - self.c()) * (self.lambda_w / self.lambda_h).sqrt())
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.dims, self.lambda_w, self.lambda_h, beta)
    }

    pub fn with_lambda_h(&self, lambda_h: f64) -> Result<Self> {
        Self::new(self.dims, self.lambda_w, lambda_h, self.beta)
    }

    pub fn with_dims(&self, dims: Dims) -> Result<Self> {
        Self::new(dims, self.lambda_w, self.lambda_h, self.beta)
    }

    /// Errors unless the plain model has a nonzero collapsed minimizer.
    pub fn check_collapsible(&self) -> Result<()> {
        if self.lambda_h <= 0.0 {
            return Err(CollapseError::Precondition(
                "collapsed minimizer requires lambda_h > 0".into(),
            ));
        }
        let c = self.c();
        if c >= 1.0 {
            return Err(CollapseError::DegenerateModel { c });
        }
        Ok(())
    }

    /// 1/(K·n) as used throughout the objectives.
    pub(crate) fn inv_kn(&self) -> f64 {
        1.0 / self.dims.total_samples() as f64
    }
}

/// Class-organized `d × (K·n)` features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    dims: Dims,
}

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>, dims: Dims) -> Result<Self> {
        if data.nrows() != dims.feature_dim || data.ncols() != dims.total_samples() {
            return Err(CollapseError::Shape(format!(
                "features must be {}x{}, got {}x{}",
                dims.feature_dim,
                dims.total_samples(),
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(CollapseError::InvalidParams(
                "features contain non-finite entries".into(),
            ));
        }
        Ok(Self { data, dims })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            data: DMatrix::zeros(dims.feature_dim, dims.total_samples()),
            dims,
        }
    }

    /// `means ⊗ 1ₙᵀ`: every sample of class k equals column k of `means`.
    pub fn from_class_means(means: &DMatrix<f64>, per_class: usize) -> Self {
        let dims = Dims {
            classes: means.ncols(),
            per_class,
            feature_dim: means.nrows(),
        };
        let data = means.kronecker(&DMatrix::from_element(1, per_class, 1.0));
        Self { data, dims }
    }

    /// Rebuilds a matrix from its column-stack vectorization.
    pub fn from_vec(dims: Dims, v: &DVector<f64>) -> Result<Self> {
        if v.len() != dims.feature_len() {
            return Err(CollapseError::Shape(format!(
                "vec(H) must have length {}, got {}",
                dims.feature_len(),
                v.len()
            )));
        }
        Self::new(
            DMatrix::from_column_slice(dims.feature_dim, dims.total_samples(), v.as_slice()),
            dims,
        )
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Column-stack vectorization.
    pub fn to_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(self.data.as_slice())
    }

    pub fn sample(&self, class: usize, i: usize) -> DVector<f64> {
        self.data.column(self.dims.column_of(class, i)).into_owned()
    }

    /// The `d × n` slab of columns belonging to `class`.
    pub fn class_block(&self, class: usize) -> DMatrix<f64> {
        let n = self.dims.per_class;
        self.data.columns(class * n, n).into_owned()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.norm()
    }

    /// Same dims, new data. Panics on shape mismatch.
    pub fn with_data(&self, data: DMatrix<f64>) -> Self {
        assert_eq!(data.shape(), self.data.shape());
        Self {
            data,
            dims: self.dims,
        }
    }
}

/// `K × d` classifier weights; row k is wₖᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(DMatrix<f64>);

impl WeightMatrix {
    pub fn new(data: DMatrix<f64>, dims: Dims) -> Result<Self> {
        if data.nrows() != dims.classes || data.ncols() != dims.feature_dim {
            return Err(CollapseError::Shape(format!(
                "weights must be {}x{}, got {}x{}",
                dims.classes,
                dims.feature_dim,
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(CollapseError::InvalidParams(
                "weights contain non-finite entries".into(),
            ));
        }
        Ok(Self(data))
    }

    pub fn zeros(dims: Dims) -> Self {
        Self(DMatrix::zeros(dims.classes, dims.feature_dim))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(self.0.as_slice())
    }
}

/// One-hot targets `Y = I_K ⊗ 1ₙᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix(DMatrix<f64>);

impl LabelMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn build_label_matrix(dims: Dims) -> LabelMatrix {
    let ones = DMatrix::from_element(1, dims.per_class, 1.0);
    LabelMatrix(DMatrix::identity(dims.classes, dims.classes).kronecker(&ones))
}

fn check_pair(w: &WeightMatrix, h: &FeatureMatrix, p: &ModelParams) -> Result<()> {
    let dims = p.dims();
    if h.dims() != dims {
        return Err(CollapseError::Shape(format!(
            "features have dims {:?}, params have {:?}",
            h.dims(),
            dims
        )));
    }
    WeightMatrix::new(w.0.clone(), dims).map(|_| ())
}

/// The plain regularized MSE objective
/// `1/(2Kn)‖WH − Y‖² + λ_W/(2K)‖W‖² + λ_H/(2Kn)‖H‖²`.
pub fn objective_plain(w: &WeightMatrix, h: &FeatureMatrix, p: &ModelParams) -> Result<f64> {
    check_pair(w, h, p)?;
    let dims = p.dims();
    let y = build_label_matrix(dims);
    let k = dims.classes as f64;
    let inv_kn = p.inv_kn();
    let fit = (w.as_matrix() * h.as_matrix() - y.as_matrix()).norm_squared();
    Ok(0.5 * inv_kn * fit
        + p.lambda_w() / (2.0 * k) * w.as_matrix().norm_squared()
        + 0.5 * p.lambda_h() * inv_kn * h.as_matrix().norm_squared())
}

/// Plain objective plus the proximal pull `β/(2Kn)‖H − H₀‖²`.
pub fn objective_prox(
    w: &WeightMatrix,
    h: &FeatureMatrix,
    h0: &FeatureMatrix,
    p: &ModelParams,
) -> Result<f64> {
    if h0.dims() != h.dims() {
        return Err(CollapseError::Shape("H and H0 differ in shape".into()));
    }
    let plain = objective_plain(w, h, p)?;
    let dist = (h.as_matrix() - h0.as_matrix()).norm_squared();
    Ok(plain + 0.5 * p.beta() * p.inv_kn() * dist)
}

/// Gradients `(∇_W f, ∇_H f)` of the plain objective, or of the proximal one
/// when `h0` is given.
pub fn objective_gradients(
    w: &WeightMatrix,
    h: &FeatureMatrix,
    h0: Option<&FeatureMatrix>,
    p: &ModelParams,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_pair(w, h, p)?;
    let dims = p.dims();
    let y = build_label_matrix(dims);
    let inv_kn = p.inv_kn();
    let k = dims.classes as f64;
    let wm = w.as_matrix();
    let hm = h.as_matrix();
    let resid = wm * hm - y.as_matrix();
    let grad_w = &resid * hm.transpose() * inv_kn + wm * (p.lambda_w() / k);
    let mut grad_h = wm.transpose() * &resid * inv_kn + hm * (p.lambda_h() * inv_kn);
    if let Some(h0) = h0 {
        if h0.dims() != dims {
            return Err(CollapseError::Shape("H and H0 differ in shape".into()));
        }
        grad_h += (hm - h0.as_matrix()) * (p.beta() * inv_kn);
    }
    Ok((grad_w, grad_h))
}

/// Closed-form minimizer over W for fixed H:
/// `W*(H) = Y Hᵀ (H Hᵀ + n λ_W I)⁻¹`, solved through a Cholesky factor.
pub fn optimal_weights(h: &FeatureMatrix, p: &ModelParams) -> Result<WeightMatrix> {
    let dims = p.dims();
    if h.dims() != dims {
        return Err(CollapseError::Shape("features do not match params".into()));
    }
    let hm = h.as_matrix();
    let n = dims.per_class as f64;
    let gram = hm * hm.transpose() + DMatrix::identity(dims.feature_dim, dims.feature_dim) * (n * p.lambda_w());
    let chol = spd_factor(gram, "H Hᵀ + n λ_W I")?;
    // Y Hᵀ = n H̄ᵀ; the system matrix is symmetric so Wᵀ = S⁻¹ (H Yᵀ).
    let y = build_label_matrix(dims);
    let hy = hm * y.as_matrix().transpose();
    let wt = chol.solve(&hy);
    Ok(WeightMatrix(wt.transpose()))
}

/// An explicit global minimizer of the plain objective built from an
/// orthonormal frame R.
#[derive(Debug, Clone)]
pub struct CollapsedMinimizer {
    pub weights: WeightMatrix,
    pub features: FeatureMatrix,
    pub frame: DMatrix<f64>,
    pub rho: f64,
}

/// Deterministic `d × K` matrix with orthonormal columns: QR of a seeded
/// Gaussian draw, each column flipped so its largest-magnitude entry is positive.
pub fn orthonormal_frame(feature_dim: usize, classes: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded_rng(seed);
    let g = gaussian_matrix(&mut rng, feature_dim, classes);
    let mut q = g.qr().q();
    for mut col in q.column_iter_mut() {
        let (idx, _) = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
        if col[idx] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

pub fn collapsed_minimizer(p: &ModelParams, seed: u64) -> Result<CollapsedMinimizer> {
    p.check_collapsible()?;
    let dims = p.dims();
    let frame = orthonormal_frame(dims.feature_dim, dims.classes, seed);
    collapsed_from_frame(p, frame)
}

/// Builds the collapsed minimizer for a caller-supplied orthonormal frame.
pub fn collapsed_from_frame(p: &ModelParams, frame: DMatrix<f64>) -> Result<CollapsedMinimizer> {
    p.check_collapsible()?;
    let dims = p.dims();
    if frame.shape() != (dims.feature_dim, dims.classes) {
        return Err(CollapseError::Shape("frame must be d x K".into()));
    }
    let ortho = frame.transpose() * &frame - DMatrix::identity(dims.classes, dims.classes);
    if max_abs(&ortho) > 1e-10 {
        return Err(CollapseError::Precondition(
            "frame columns are not orthonormal".into(),
        ));
    }
    let rho = p.rho()?;
    let scale = rho.sqrt();
    let features = FeatureMatrix::from_class_means(&(&frame * scale), dims.per_class);
    let weights = WeightMatrix(frame.transpose() * ((p.lambda_h() / p.lambda_w()).sqrt() * scale));
    Ok(CollapsedMinimizer {
        weights,
        features,
        frame,
        rho,
    })
}

/// Outcome of the collapse-structure test plus the numbers behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseCheck {
    pub collapsed: bool,
    /// max over samples of ‖h_{k,i} − h̄_k‖ / (1 + ‖h̄_k‖)
    pub within_class_deviation: f64,
    /// ρ fitted to the centered Gram of the class means
    pub rho: f64,
    /// max |G − ρ(I − 11ᵀ/K)| / (1 + ρ)
    pub gram_residual: f64,
}

pub const DEFAULT_COLLAPSE_TOL: f64 = 1e-8;

pub fn is_collapsed(h: &FeatureMatrix, tol: f64) -> CollapseCheck {
    let stats = ClassStats::from_features(h);
    let dims = h.dims();
    let kf = dims.classes as f64;

    let mut within = 0.0f64;
    for k in 0..dims.classes {
        let mean = stats.class_means.column(k);
        let denom = 1.0 + mean.norm();
        for i in 0..dims.per_class {
            let dev = (h.as_matrix().column(dims.column_of(k, i)) - mean).norm() / denom;
            within = within.max(dev);
        }
    }

    let centered = stats.centered_means();
    let gram = centered.transpose() * &centered;
    let mean_diag = gram.diagonal().mean();
    // diag of ρ(I − 11ᵀ/K) is ρ(1 − 1/K); K = 1 has no centered structure.
    let rho = if dims.classes > 1 {
        mean_diag / (1.0 - 1.0 / kf)
    } else {
        0.0
    };
    let target = (DMatrix::identity(dims.classes, dims.classes)
        - DMatrix::from_element(dims.classes, dims.classes, 1.0 / kf))
        * rho;
    let gram_residual = max_abs(&(gram - target)) / (1.0 + rho);

    CollapseCheck {
        collapsed: within <= tol && gram_residual <= tol && rho > tol,
        within_class_deviation: within,
        rho,
        gram_residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{gaussian_features, gaussian_matrix, seeded_rng};

    fn params(k: usize, n: usize, d: usize, lw: f64, lh: f64) -> ModelParams {
        ModelParams::new(Dims::new(k, n, d).unwrap(), lw, lh, 1.0).unwrap()
    }

    #[test]
    fn label_matrix_examples() {
        let y = build_label_matrix(Dims::new(2, 2, 2).unwrap());
        assert_eq!(
            y.as_matrix(),
            &DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0])
        );
        let y = build_label_matrix(Dims::new(1, 3, 1).unwrap());
        assert_eq!(y.as_matrix(), &DMatrix::from_element(1, 3, 1.0));
        let y = build_label_matrix(Dims::new(3, 1, 3).unwrap());
        assert_eq!(y.as_matrix(), &DMatrix::identity(3, 3));
        let dims = Dims::new(4, 5, 6).unwrap();
        assert_eq!(build_label_matrix(dims).as_matrix().norm_squared(), 20.0);
    }

    #[test]
    fn model_rejects_d_below_k() {
        let dims = Dims::new(4, 2, 3).unwrap();
        assert!(ModelParams::new(dims, 1.0, 0.1, 1.0).is_err());
        assert!(Dims::new(0, 2, 3).is_err());
        assert!(Dims::new(2, 2, 0).is_err());
    }

    #[test]
    fn objective_at_zero_is_half() {
        let p = params(3, 4, 5, 0.7, 0.3);
        let dims = p.dims();
        let v = objective_plain(&WeightMatrix::zeros(dims), &FeatureMatrix::zeros(dims), &p).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn objective_rejects_shape_mismatch() {
        let p = params(3, 4, 5, 0.7, 0.3);
        let other = Dims::new(3, 2, 5).unwrap();
        let err = objective_plain(&WeightMatrix::zeros(p.dims()), &FeatureMatrix::zeros(other), &p);
        assert!(matches!(err, Err(CollapseError::Shape(_))));
    }

    #[test]
    fn prox_reduces_to_plain_with_shifted_lambda_h() {
        let mut rng = seeded_rng(3);
        let dims = Dims::new(3, 2, 4).unwrap();
        let p = ModelParams::new(dims, 0.8, 0.0, 1.0).unwrap();
        let p_shift = ModelParams::new(dims, 0.8, 1.0, 1.0).unwrap();
        let h = gaussian_features(&mut rng, dims, 1.0);
        let w = WeightMatrix::new(gaussian_matrix(&mut rng, 3, 4), dims).unwrap();
        let zero = FeatureMatrix::zeros(dims);
        let a = objective_prox(&w, &h, &zero, &p).unwrap();
        let b = objective_plain(&w, &h, &p_shift).unwrap();
        assert!((a - b).abs() < 1e-13);
        // H = H0 drops the proximal term.
        let c = objective_prox(&w, &h, &h, &p).unwrap();
        assert_eq!(c, objective_plain(&w, &h, &p).unwrap());
    }

    #[test]
    fn prox_matches_scalar_loop() {
        let mut rng = seeded_rng(11);
        let dims = Dims::new(2, 2, 3).unwrap();
        let p = ModelParams::new(dims, 0.6, 0.2, 3.5).unwrap();
        let h = gaussian_features(&mut rng, dims, 1.0);
        let h0 = gaussian_features(&mut rng, dims, 1.0);
        let w = WeightMatrix::new(gaussian_matrix(&mut rng, 2, 3), dims).unwrap();
        let (kk, nn, dd) = (2usize, 2usize, 3usize);
        let kn = (kk * nn) as f64;
        let mut fit = 0.0;
        for r in 0..kk {
            for col in 0..kk * nn {
                let mut s = 0.0;
                for l in 0..dd {
                    s += w.as_matrix()[(r, l)] * h.as_matrix()[(l, col)];
                }
                let target = if col / nn == r { 1.0 } else { 0.0 };
                fit += (s - target) * (s - target);
            }
        }
        let mut wn = 0.0;
        for x in w.as_matrix().iter() {
            wn += x * x;
        }
        let mut hn = 0.0;
        let mut dist = 0.0;
        for (a, b) in h.as_matrix().iter().zip(h0.as_matrix().iter()) {
            hn += a * a;
            dist += (a - b) * (a - b);
        }
        let expected = fit / (2.0 * kn) + 0.6 / (2.0 * kk as f64) * wn + 0.2 / (2.0 * kn) * hn + 3.5 / (2.0 * kn) * dist;
        let got = objective_prox(&w, &h, &h0, &p).unwrap();
        assert!((got - expected).abs() < 1e-13 * (1.0 + expected));
    }

    #[test]
    fn optimal_weights_zero_features() {
        let p = params(3, 2, 4, 0.5, 0.1);
        let w = optimal_weights(&FeatureMatrix::zeros(p.dims()), &p).unwrap();
        assert_eq!(w.as_matrix().norm(), 0.0);
    }

    #[test]
    fn optimal_weights_zero_w_gradient_fd() {
        let mut rng = seeded_rng(5);
        let p = params(3, 2, 4, 0.5, 0.1);
        let h = gaussian_features(&mut rng, p.dims(), 1.0);
        let w = optimal_weights(&h, &p).unwrap();
        // Central differences of the objective in every W entry.
        let eps = 1e-6;
        let mut max_fd = 0.0f64;
        for idx in 0..w.as_matrix().len() {
            let mut plus = w.as_matrix().clone();
            let mut minus = w.as_matrix().clone();
            plus[idx] += eps;
            minus[idx] -= eps;
            let fp = objective_plain(&WeightMatrix(plus), &h, &p).unwrap();
            let fm = objective_plain(&WeightMatrix(minus), &h, &p).unwrap();
            max_fd = max_fd.max(((fp - fm) / (2.0 * eps)).abs());
        }
        assert!(max_fd < 1e-9, "fd gradient {max_fd}");
        let (gw, _) = objective_gradients(&w, &h, None, &p).unwrap();
        assert!(gw.norm() < 1e-10 * (1.0 + h.frobenius()));
    }

    #[test]
    fn optimal_weights_beat_random_weights() {
        let mut rng = seeded_rng(8);
        let p = params(3, 3, 5, 1.2, 0.2);
        let h = gaussian_features(&mut rng, p.dims(), 1.5);
        let best = objective_plain(&optimal_weights(&h, &p).unwrap(), &h, &p).unwrap();
        for _ in 0..100 {
            let w = WeightMatrix::new(gaussian_matrix(&mut rng, 3, 5), p.dims()).unwrap();
            assert!(objective_plain(&w, &h, &p).unwrap() >= best);
        }
    }

    #[test]
    fn collapsed_minimizer_identities() {
        let p = params(4, 3, 7, 2.0, 0.125);
        assert!((p.c() - 0.5).abs() < 1e-15);
        let m = collapsed_minimizer(&p, 42).unwrap();
        assert!((m.rho - 2.0).abs() < 1e-14);
        let rtr = m.frame.transpose() * &m.frame;
        assert!(max_abs(&(rtr - DMatrix::identity(4, 4))) < 1e-12);
        let stats = ClassStats::from_features(&m.features);
        let gram = stats.class_means.transpose() * &stats.class_means;
        assert!(max_abs(&(gram - DMatrix::identity(4, 4) * 2.0)) < 1e-10);
        // within-class columns are exactly equal
        for k in 0..4 {
            for i in 1..3 {
                assert_eq!(m.features.sample(k, i), m.features.sample(k, 0));
            }
        }
        // wₖ = sqrt(λH/λW) h̄ₖ
        let expected = stats.class_means.transpose() * (0.125f64 / 2.0).sqrt();
        assert!(max_abs(&(m.weights.as_matrix() - expected)) < 1e-14);
    }

    #[test]
    fn optimal_weights_recover_collapsed_weights() {
        let p = params(3, 4, 5, 2.0, 0.125);
        let m = collapsed_minimizer(&p, 1).unwrap();
        let w = optimal_weights(&m.features, &p).unwrap();
        assert!(max_abs(&(w.as_matrix() - m.weights.as_matrix())) < 1e-12);
    }

    #[test]
    fn degenerate_model_is_rejected() {
        let p = params(3, 2, 4, 2.0, 1.0);
        assert!(matches!(
            collapsed_minimizer(&p, 0),
            Err(CollapseError::DegenerateModel { .. })
        ));
        // c = 1 exactly is degenerate too.
        let p = params(3, 2, 4, 2.0, 0.5);
        assert!(matches!(
            collapsed_minimizer(&p, 0),
            Err(CollapseError::DegenerateModel { .. })
        ));
        let p = params(3, 2, 4, 2.0, 0.0);
        assert!(matches!(collapsed_minimizer(&p, 0), Err(CollapseError::Precondition(_))));
    }

    #[test]
    fn frame_is_deterministic() {
        let a = orthonormal_frame(9, 4, 77);
        let b = orthonormal_frame(9, 4, 77);
        assert_eq!(a.as_slice(), b.as_slice());
        for col in a.column_iter() {
            let big = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn minimizer_beats_scaled_weights() {
        let p = params(3, 2, 4, 2.0, 0.125);
        let m = collapsed_minimizer(&p, 9).unwrap();
        let best = objective_plain(&m.weights, &m.features, &p).unwrap();
        let doubled = WeightMatrix(m.weights.as_matrix() * 2.0);
        assert!(objective_plain(&doubled, &m.features, &p).unwrap() > best);
    }

    #[test]
    fn rho_and_minimum_do_not_depend_on_dims() {
        let base = params(2, 1, 2, 2.0, 0.125);
        let m = collapsed_minimizer(&base, 0).unwrap();
        let f0 = objective_plain(&m.weights, &m.features, &base).unwrap();
        for (k, n, d) in [(3, 2, 5), (4, 10, 10), (5, 3, 9)] {
            let p = params(k, n, d, 2.0, 0.125);
            let m2 = collapsed_minimizer(&p, 3).unwrap();
            assert_eq!(m2.rho, m.rho);
            let f = objective_plain(&m2.weights, &m2.features, &p).unwrap();
            assert!((f - f0).abs() < 1e-13);
        }
    }

    #[test]
    fn collapse_check_cases() {
        let p = params(2, 2, 3, 2.0, 0.125);
        let m = collapsed_minimizer(&p, 4).unwrap();
        let tol = DEFAULT_COLLAPSE_TOL;
        assert!(is_collapsed(&m.features, tol).collapsed);

        let mut rng = seeded_rng(12);
        let noise = gaussian_matrix(&mut rng, 3, 4);
        let noise = &noise / noise.norm() * (10.0 * tol);
        let noisy = m.features.with_data(m.features.as_matrix() + noise);
        assert!(!is_collapsed(&noisy, tol).collapsed);

        let zero = FeatureMatrix::zeros(p.dims());
        let check = is_collapsed(&zero, tol);
        assert!(!check.collapsed);
        assert_eq!(check.rho, 0.0);
    }
}
