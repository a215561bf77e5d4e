use thiserror::Error;

use crate::prox::ProxSolution;

pub type Result<T> = std::result::Result<T, CollapseError>;

#[derive(Debug, Error)]
pub enum CollapseError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate model: c = sqrt(lambda_h * lambda_w) = {c} >= 1, the minimizer is (0, 0)")]
    DegenerateModel { c: f64 },

    #[error("degenerate statistics: {0}")]
    DegenerateStats(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular Schur complement at the base point")]
    SingularSchur,

    #[error("prox solve did not converge after {iters} iterations (|grad| = {grad_norm:.3e})")]
    NoConvergence {
        iters: usize,
        grad_norm: f64,
        best: Box<ProxSolution>,
    },

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<CollapseError>,
    },

    #[error("integrator step collapse at t = {t}: monotonicity still violated after {halvings} halvings")]
    StepCollapse { t: f64, halvings: u32 },

    #[error("block index ({k}, {ktilde}) out of range for K = {classes}")]
    IndexOutOfRange { k: usize, ktilde: usize, classes: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("base point mismatch: {0}")]
    BaseMismatch(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse: {0}")]
    Parse(String),
}
