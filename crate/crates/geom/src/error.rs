//! Crate-wide error type.
//!
//! Errors are grouped by the failure class they report, which the CLI maps
//! onto process exit codes: configuration/parse problems, chart-domain and
//! metric-degeneracy problems, chart-validity problems (conjugate points),
//! and numerical-quality failures (an integration whose invariants drifted).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    /// Malformed configuration text. `line`/`col` are 1-based, `offset` is a
    /// byte offset into the input.
    #[error("parse error at line {line}, col {col} (offset {offset}): {msg}")]
    Parse {
        line: usize,
        col: usize,
        offset: usize,
        msg: String,
    },

    /// A structurally valid but semantically inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Point lies outside the chart domain of the metric.
    #[error("point outside chart domain: coordinate `{coord}` = {value} not in ({lo}, {hi})")]
    OutsideDomain {
        coord: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// Metric evaluated to something non-finite.
    #[error("non-finite metric evaluation at component g[{i}][{j}]")]
    NonFinite { i: usize, j: usize },

    /// Metric determinant fell below the singularity threshold.
    #[error("singular metric: |det| = {det:.3e} below threshold {threshold:.3e}")]
    SingularMetric { det: f64, threshold: f64 },

    /// Eigenvalue sign counts of the metric do not match the declared signature.
    #[error("signature mismatch: metric has ({plus} plus, {minus} minus), declared ({decl_plus}, {decl_minus})")]
    SignatureMismatch {
        plus: usize,
        minus: usize,
        decl_plus: usize,
        decl_minus: usize,
    },

    /// A geodesic left the chart before reaching the requested parameter.
    #[error("geodesic left the chart at t = {t:.6}: {inner}")]
    ChartExit { t: f64, inner: Box<GeomError> },

    /// Requested normal-coordinate radius reaches past the first conjugate point.
    #[error("chart validity: |z| = {requested:.6} exceeds conjugate radius {conjugate:.6}")]
    BeyondConjugate { requested: f64, conjugate: f64 },

    /// The conformal-factor bracket was non-positive; the chart has broken down.
    #[error("chart validity: conformal bracket = {bracket:.6e} is not positive")]
    NonPositiveBracket { bracket: f64 },

    /// An integration finished but its structural invariants drifted too far.
    #[error("numerical quality: {check} residual {residual:.3e} exceeds {limit:.3e}")]
    NumericalQuality {
        check: String,
        residual: f64,
        limit: f64,
    },

    /// Tensor-shape misuse (rank, extent, or slot-kind violations).
    #[error("tensor error: {0}")]
    Tensor(String),

    /// Null initial direction in an indefinite signature.
    #[error("null direction: |eta(v,v)| = {norm:.3e} is too small to normalize")]
    NullDirection { norm: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GeomError>;

impl GeomError {
    /// Process exit code for the CLI: 2 config, 3 domain/singularity,
    /// 4 chart validity, 5 invariant failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            GeomError::Parse { .. } | GeomError::Config(_) => 2,
            GeomError::OutsideDomain { .. }
            | GeomError::NonFinite { .. }
            | GeomError::SingularMetric { .. }
            | GeomError::SignatureMismatch { .. }
            | GeomError::NullDirection { .. } => 3,
            GeomError::ChartExit { inner, .. } => inner.exit_code().max(3),
            GeomError::BeyondConjugate { .. } | GeomError::NonPositiveBracket { .. } => 4,
            GeomError::NumericalQuality { .. } => 5,
            GeomError::Tensor(_) => 2,
            GeomError::Io(_) => 2,
        }
    }
}
