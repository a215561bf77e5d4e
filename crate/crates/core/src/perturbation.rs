//! Linear response of the proximal minimizer to perturbations of its input
//! features: Hessian blocks, the exact and first-order response operators,
//! class-block extraction and the analytic block spectra at collapse.
//!
//! Vectorization is column-stack everywhere: `vec(H)[col·d + row] = H[row, col]`
//! and `vec(W)[i·K + k] = W[k, i]`, which is what `DMatrix::as_slice` yields.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{CollapseError, Result};
use crate::linalg::{singular_values_desc, spd_factor, symmetrize};
use crate::model::{build_label_matrix, is_collapsed, FeatureMatrix, ModelParams, WeightMatrix};
use crate::stats::ClassStats;

/// Above this dimension the exact operator is kept factored.
pub const DENSE_LIMIT: usize = 2000;

/// Tolerance used to decide whether a base point is the collapsed minimizer.
pub const BASE_COLLAPSE_TOL: f64 = 1e-8;

/// The point a response operator was linearized at.
#[derive(Debug, Clone, PartialEq)]
pub struct BasePoint {
    pub weights: WeightMatrix,
    pub features: FeatureMatrix,
    pub anchor: Option<FeatureMatrix>,
    /// H has collapse structure with ρ matching the model and W = √(λ_H/λ_W) H̄ᵀ.
    pub collapsed_minimizer: bool,
}

impl BasePoint {
    pub fn new(weights: &WeightMatrix, features: &FeatureMatrix, anchor: Option<&FeatureMatrix>, p: &ModelParams) -> Self {
        Self {
            collapsed_minimizer: is_collapsed_minimizer(weights, features, p),
            weights: weights.clone(),
            features: features.clone(),
            anchor: anchor.cloned(),
        }
    }

    fn same_point(&self, other: &BasePoint) -> bool {
        self.weights == other.weights && self.features == other.features
    }
}

fn is_collapsed_minimizer(w: &WeightMatrix, h: &FeatureMatrix, p: &ModelParams) -> bool {
    let Ok(rho) = p.rho() else { return false };
    let check = is_collapsed(h, BASE_COLLAPSE_TOL);
    if !check.collapsed || (check.rho - rho).abs() > BASE_COLLAPSE_TOL * (1.0 + rho) {
        return false;
    }
    let stats = ClassStats::from_features(h);
    let expected = stats.class_means.transpose() * (p.lambda_h() / p.lambda_w()).sqrt();
    (w.as_matrix() - &expected).norm() <= BASE_COLLAPSE_TOL * (1.0 + expected.norm())
}

/// Second derivatives of the proximal objective at a base point.
#[derive(Debug, Clone)]
pub struct HessianBlocks {
    /// ∇_H∇_H f, dnK × dnK
    pub hh: DMatrix<f64>,
    /// ∇_W∇_W f, Kd × Kd
    pub ww: DMatrix<f64>,
    /// ∂vec(∇_H f)/∂vec(W), dnK × Kd
    pub wh: DMatrix<f64>,
    /// dnK × Kd; column i·K + k is vec(e_i e_kᵀ (WH − Y))
    pub e: DMatrix<f64>,
    pub base: BasePoint,
}

pub fn e_matrix(w: &WeightMatrix, h: &FeatureMatrix, p: &ModelParams) -> DMatrix<f64> {
    let dims = p.dims();
    let (d, k) = (dims.feature_dim, dims.classes);
    let kn = dims.total_samples();
    let resid = w.as_matrix() * h.as_matrix() - build_label_matrix(dims).as_matrix();
    let mut e = DMatrix::zeros(d * kn, k * d);
    for i in 0..d {
        for cls in 0..k {
            let col = i * k + cls;
            for sample in 0..kn {
                e[(sample * d + i, col)] = resid[(cls, sample)];
            }
        }
    }
    e
}

pub fn hessian_blocks(w: &WeightMatrix, h: &FeatureMatrix, p: &ModelParams) -> Result<HessianBlocks> {
    hessian_blocks_with_anchor(w, h, None, p)
}

pub fn hessian_blocks_with_anchor(
    w: &WeightMatrix,
    h: &FeatureMatrix,
    anchor: Option<&FeatureMatrix>,
    p: &ModelParams,
) -> Result<HessianBlocks> {
    let dims = p.dims();
    if h.dims() != dims {
        return Err(CollapseError::Shape("features do not match params".into()));
    }
    WeightMatrix::new(w.as_matrix().clone(), dims)?;
    let (d, k) = (dims.feature_dim, dims.classes);
    let kn = dims.total_samples();
    let inv_kn = 1.0 / kn as f64;
    let wm = w.as_matrix();
    let hm = h.as_matrix();

    let wtw = wm.transpose() * wm;
    let hh = DMatrix::<f64>::identity(kn, kn).kronecker(&wtw) * inv_kn
        + DMatrix::identity(d * kn, d * kn) * ((p.lambda_h() + p.beta()) * inv_kn);
    let ww = (hm * hm.transpose()).kronecker(&DMatrix::<f64>::identity(k, k)) * inv_kn
        + DMatrix::identity(k * d, k * d) * (p.lambda_w() / k as f64);
    let e = e_matrix(w, h, p);
    let wh = (&e + hm.transpose().kronecker(&wm.transpose())) * inv_kn;
    Ok(HessianBlocks {
        hh,
        ww,
        wh,
        e,
        base: BasePoint::new(w, h, anchor, p),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResponseKind {
    ExactSchur,
    Neumann,
}

impl ResponseKind {
    pub fn name(&self) -> &'static str {
        match self {
            ResponseKind::ExactSchur => "exact_schur",
            ResponseKind::Neumann => "neumann",
        }
    }
}

#[derive(Debug, Clone)]
enum Repr {
    Dense(DMatrix<f64>),
    /// F = scale · S⁻¹
    Factored { chol: Cholesky<f64, Dyn>, scale: f64 },
}

/// The map `vec(δH₀) ↦ vec(δH)`.
#[derive(Debug, Clone)]
pub struct ResponseOperator {
    kind: ResponseKind,
    base: BasePoint,
    params: ModelParams,
    repr: Repr,
}

impl ResponseOperator {
    pub fn kind(&self) -> ResponseKind {
        self.kind
    }

    pub fn base(&self) -> &BasePoint {
        &self.base
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// dnK
    pub fn size(&self) -> usize {
        self.params.dims().feature_len()
    }

    pub fn dense(&self) -> Option<&DMatrix<f64>> {
        match &self.repr {
            Repr::Dense(m) => Some(m),
            Repr::Factored { .. } => None,
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.size() {
            return Err(CollapseError::Shape(format!(
                "response operator acts on length {}, got {}",
                self.size(),
                v.len()
            )));
        }
        Ok(match &self.repr {
            Repr::Dense(m) => m * v,
            Repr::Factored { chol, scale } => chol.solve(v) * *scale,
        })
    }

    /// `F · M` for a dnK × m matrix.
    pub fn apply_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.repr {
            Repr::Dense(f) => f * m,
            Repr::Factored { chol, scale } => chol.solve(m) * *scale,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Dense(m) => m.clone(),
            Repr::Factored { .. } => self.apply_matrix(&DMatrix::identity(self.size(), self.size())),
        }
    }
}

/// `F = (β/Kn)(HH − WH·WW⁻¹·WHᵀ)⁻¹`
pub fn exact_response(blocks: &HessianBlocks, p: &ModelParams) -> Result<ResponseOperator> {
    exact_response_with_limit(blocks, p, DENSE_LIMIT)
}

pub fn exact_response_with_limit(blocks: &HessianBlocks, p: &ModelParams, dense_limit: usize) -> Result<ResponseOperator> {
    let ww = spd_factor(blocks.ww.clone(), "W-block of the Hessian")?;
    let correction = &blocks.wh * ww.solve(&blocks.wh.transpose());
    let schur = symmetrize(&(&blocks.hh - correction));
    let chol = Cholesky::new(schur).ok_or(CollapseError::SingularSchur)?;
    let scale = p.beta() * p.inv_kn();
    let n = blocks.hh.nrows();
    let repr = if n <= dense_limit {
        Repr::Dense(symmetrize(&(chol.solve(&DMatrix::identity(n, n)) * scale)))
    } else {
        Repr::Factored { chol, scale }
    };
    Ok(ResponseOperator {
        kind: ResponseKind::ExactSchur,
        base: blocks.base.clone(),
        params: *p,
        repr,
    })
}

/// First-order form `F = (1 − λ_H/β) I − (1/β) I⊗WᵀW + (1/β) Z`.
pub fn neumann_response(w: &WeightMatrix, h: &FeatureMatrix, p: &ModelParams) -> Result<ResponseOperator> {
    let dims = p.dims();
    if p.beta() < 50.0 * p.lambda_h().max(1.0) {
        warn!(
            "beta = {} is not large against max(1, lambda_h); the first-order response is inaccurate",
            p.beta()
        );
    }
    let blocks = hessian_blocks(w, h, p)?;
    let (d, k) = (dims.feature_dim, dims.classes);
    let kn = dims.total_samples();
    let n = dims.per_class as f64;
    let hm = h.as_matrix();
    let wm = w.as_matrix();
    // Kn·WH = E + Hᵀ⊗Wᵀ, so Z = (Kn·WH)(HHᵀ⊗I + nλ_W I)⁻¹(Kn·WH)ᵀ.
    let mixed = &blocks.wh * kn as f64;
    let inner = (hm * hm.transpose()).kronecker(&DMatrix::<f64>::identity(k, k))
        + DMatrix::identity(k * d, k * d) * (n * p.lambda_w());
    let inner = spd_factor(inner, "H Hᵀ ⊗ I + n λ_W I")?;
    let z = &mixed * inner.solve(&mixed.transpose());
    let beta = p.beta();
    let wtw = wm.transpose() * wm;
    let f = DMatrix::identity(d * kn, d * kn) * (1.0 - p.lambda_h() / beta)
        - DMatrix::<f64>::identity(kn, kn).kronecker(&wtw) / beta
        + z / beta;
    Ok(ResponseOperator {
        kind: ResponseKind::Neumann,
        base: blocks.base,
        params: *p,
        repr: Repr::Dense(f),
    })
}

/// The map `vec(δH₀) ↦ vec(δW) = −WW⁻¹ · WHᵀ · F · vec(δH₀)`, as a Kd × dnK matrix.
pub fn delta_w_response(blocks: &HessianBlocks, f: &ResponseOperator, _p: &ModelParams) -> Result<DMatrix<f64>> {
    if f.kind() != ResponseKind::ExactSchur {
        return Err(CollapseError::BaseMismatch(
            "the weight response needs the exact response operator".into(),
        ));
    }
    if !blocks.base.same_point(f.base()) {
        return Err(CollapseError::BaseMismatch(
            "Hessian blocks and response operator were built at different points".into(),
        ));
    }
    let ww = spd_factor(blocks.ww.clone(), "W-block of the Hessian")?;
    let whf = f.apply_matrix(&blocks.wh).transpose();
    Ok(-ww.solve(&whf))
}

/// Block `(k, k̃)` of F, zero-based: rows `k·dn..(k+1)·dn`, columns `k̃·dn..(k̃+1)·dn`.
pub fn extract_block(f: &ResponseOperator, k: usize, ktilde: usize) -> Result<DMatrix<f64>> {
    let dims = f.params().dims();
    let classes = dims.classes;
    if k >= classes || ktilde >= classes {
        return Err(CollapseError::IndexOutOfRange { k, ktilde, classes });
    }
    let dn = dims.feature_dim * dims.per_class;
    Ok(match f.dense() {
        Some(m) => m.view((k * dn, ktilde * dn), (dn, dn)).into_owned(),
        None => {
            let mut sel = DMatrix::zeros(f.size(), dn);
            for j in 0..dn {
                sel[(ktilde * dn + j, j)] = 1.0;
            }
            f.apply_matrix(&sel).rows(k * dn, dn).into_owned()
        }
    })
}

/// Closed-form eigenstructure of a class block at the collapsed minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSpectrum {
    /// λ_i for i = 1..d (empty for off-diagonal blocks)
    pub lambdas: Vec<f64>,
    /// μ_i for i = 1..d, relative to the block's own class (empty off-diagonal)
    pub mus: Vec<f64>,
    /// all dn singular values, sorted descending
    pub values: Vec<f64>,
}

impl AnalyticSpectrum {
    /// Distinct values, descending, merging entries closer than `tol`.
    pub fn plateaus(&self, tol: f64) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &v in &self.values {
            if out.last().is_none_or(|last| (last - v).abs() > tol) {
                out.push(v);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpectrum {
    pub k: usize,
    pub ktilde: usize,
    /// sorted descending
    pub singular_values: Vec<f64>,
    pub analytic: Option<AnalyticSpectrum>,
}

impl BlockSpectrum {
    pub fn max_abs_error(&self) -> Option<f64> {
        self.analytic.as_ref().map(|a| {
            a.values
                .iter()
                .zip(&self.singular_values)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        })
    }

    pub fn count_near(&self, value: f64, tol: f64) -> usize {
        self.singular_values.iter().filter(|s| (*s - value).abs() <= tol).count()
    }
}

pub fn analytic_block_spectrum(p: &ModelParams, k: usize, ktilde: usize) -> Result<BlockSpectrum> {
    let dims = p.dims();
    let (d, classes, n) = (dims.feature_dim, dims.classes, dims.per_class);
    if k >= classes || ktilde >= classes {
        return Err(CollapseError::IndexOutOfRange { k, ktilde, classes });
    }
    if d <= classes {
        return Err(CollapseError::Precondition(format!(
            "analytic block spectra need d > K, got d = {d}, K = {classes}"
        )));
    }
    p.check_collapsible().map_err(|_| {
        CollapseError::Precondition("analytic block spectra need lambda_h > 0 and lambda_h lambda_w < 1".into())
    })?;
    let (lh, lw, beta) = (p.lambda_h(), p.lambda_w(), p.beta());
    if beta < 50.0 * lh.max(1.0) {
        warn!("beta = {beta} is not large against max(1, lambda_h); the analytic spectrum assumes it is");
    }
    let c = p.c();
    let root = (lh / lw).sqrt();

    let analytic = if k == ktilde {
        let lambdas: Vec<f64> = (0..d)
            .map(|i| if i < classes { 1.0 - root / beta } else { 1.0 - lh / beta })
            .collect();
        let mus: Vec<f64> = (0..d)
            .map(|i| {
                if i == k {
                    (2.0 * c - 1.0).powi(2) * root
                } else if i < classes {
                    (c * c + (1.0 - c) * (1.0 - c)) * root
                } else {
                    lh
                }
            })
            .collect();
        let mut values = Vec::with_capacity(d * n);
        for i in 0..d {
            values.push(lambdas[i] + mus[i] / beta);
            values.extend(std::iter::repeat_n(lambdas[i], n - 1));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        AnalyticSpectrum { lambdas, mus, values }
    } else {
        let mut values = vec![0.0; d * n];
        values[0] = 2.0 * lh * (1.0 - c) / beta;
        AnalyticSpectrum {
            lambdas: Vec::new(),
            mus: Vec::new(),
            values,
        }
    };
    Ok(BlockSpectrum {
        k,
        ktilde,
        singular_values: analytic.values.clone(),
        analytic: Some(analytic),
    })
}

pub fn numeric_block_spectrum(f: &ResponseOperator, k: usize, ktilde: usize) -> Result<BlockSpectrum> {
    let block = extract_block(f, k, ktilde)?;
    Ok(BlockSpectrum {
        k,
        ktilde,
        singular_values: singular_values_desc(&block),
        analytic: None,
    })
}

/// Numeric block spectrum with the analytic values attached. Refuses base
/// points that are not the collapsed minimizer of `f`'s model.
pub fn compare_block_spectrum(f: &ResponseOperator, k: usize, ktilde: usize) -> Result<BlockSpectrum> {
    if !f.base().collapsed_minimizer {
        return Err(CollapseError::BaseMismatch(
            "analytic spectra are only valid at the collapsed minimizer".into(),
        ));
    }
    let mut numeric = numeric_block_spectrum(f, k, ktilde)?;
    numeric.analytic = analytic_block_spectrum(f.params(), k, ktilde)?.analytic;
    Ok(numeric)
}

/// Kd × dK permutation with `K · vec(A) = vec(Aᵀ)` for d × K matrices A.
pub fn commutation_matrix(d: usize, k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k * d, d * k);
    for i in 0..d {
        for j in 0..k {
            m[(i * k + j, j * d + i)] = 1.0;
        }
    }
    m
}

/// One CSV row of a block spectrum comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRow {
    pub k: usize,
    pub ktilde: usize,
    pub index: usize,
    pub sigma_numeric: f64,
    pub sigma_analytic: Option<f64>,
    pub abs_err: Option<f64>,
}

pub fn spectrum_rows(s: &BlockSpectrum) -> Vec<SpectrumRow> {
    s.singular_values
        .iter()
        .enumerate()
        .map(|(index, &sigma)| {
            let analytic = s.analytic.as_ref().map(|a| a.values[index]);
            SpectrumRow {
                k: s.k,
                ktilde: s.ktilde,
                index,
                sigma_numeric: sigma,
                sigma_analytic: analytic,
                abs_err: analytic.map(|a| (a - sigma).abs()),
            }
        })
        .collect()
}

/// A way of building the response operator at a base point.
pub trait ResponseStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, w: &WeightMatrix, h: &FeatureMatrix, p: &ModelParams) -> Result<ResponseOperator>;
}

pub struct ExactSchur;

impl ResponseStrategy for ExactSchur {
    fn name(&self) -> &'static str {
        ResponseKind::ExactSchur.name()
    }
    fn build(&self, w: &WeightMatrix, h: &FeatureMatrix, p: &ModelParams) -> Result<ResponseOperator> {
        exact_response(&hessian_blocks(w, h, p)?, p)
    }
}

pub struct Neumann;

impl ResponseStrategy for Neumann {
    fn name(&self) -> &'static str {
        ResponseKind::Neumann.name()
    }
    fn build(&self, w: &WeightMatrix, h: &FeatureMatrix, p: &ModelParams) -> Result<ResponseOperator> {
        neumann_response(w, h, p)
    }
}

/// Response strategies by name.
pub struct ResponseRegistry {
    entries: BTreeMap<&'static str, Box<dyn ResponseStrategy>>,
}

impl ResponseRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, s: Box<dyn ResponseStrategy>) {
        self.entries.insert(s.name(), s);
    }

    pub fn get(&self, name: &str) -> Option<&dyn ResponseStrategy> {
        self.entries.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

impl Default for ResponseRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(ExactSchur));
        r.register(Box::new(Neumann));
        r
    }
}
