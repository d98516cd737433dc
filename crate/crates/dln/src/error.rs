//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DlnError>;

#[derive(Debug, Error)]
pub enum DlnError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite entries in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular operator: smallest singular value {sigma_min:.3e}")]
    SingularOperator { sigma_min: f64 },

    #[error("degenerate spectrum: relative gap {gap:.3e} below {threshold:.3e}")]
    DegenerateSpectrum { gap: f64, threshold: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not psd: eigenvalue {min_eig:.3e}")]
    NotPsd { min_eig: f64 },

    #[error(
        "polar recursion failed at layer {layer}: eigenvalue {min_eig:.3e} makes R² - G indefinite"
    )]
    PolarRecursion { layer: usize, min_eig: f64 },

    #[error("state is off the balanced manifold: residual {residual:.3e} exceeds {tolerance:.3e}")]
    Unbalanced { residual: f64, tolerance: f64 },

    #[error("particle ordering violated after step of dt = {dt:.3e}")]
    ParticleCollision { dt: f64 },

    #[error("numerical abort at t = {t}: {reason}")]
    NumericalAbort { t: f64, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DlnError {
    /// Process exit code for the CLI: config errors are usage errors (2),
    /// everything else counts as a numerical abort (3).
    pub fn exit_code(&self) -> i32 {
        match self {
            DlnError::Config(_) => 2,
            _ => 3,
        }
    }
}
