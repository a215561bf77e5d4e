//! Numerical toolkit for the regularized unconstrained-features model with a
//! proximal term: exact minimizers, neural-collapse metrics, the central-path
//! gradient flow, the proximal solver and the linear-response operator.

pub mod central_path;
pub mod error;
pub mod io;
pub mod joint;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod perturbation;
pub mod prox;
pub mod random;
pub mod stats;

pub use error::{CollapseError, Result};
pub use metrics::MetricReport;
pub use model::{CollapsedMinimizer, Dims, FeatureMatrix, LabelMatrix, ModelParams, WeightMatrix};
pub use stats::ClassStats;
