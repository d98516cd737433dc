//! Centralized numerical tolerances.
//!
//! Every threshold used by the library lives here with a short note on where
//! it comes from. Two families cover most needs: `ALGEBRAIC` for identities
//! that hold exactly in real arithmetic and only pick up f64 rounding, and
//! `ODE` for quantities limited by a discretization error rather than by
//! machine precision.

/// Identities that are exact in real arithmetic (factorization round trips,
/// spectral decompositions, orthonormality). f64 rounding in small dense
/// factorizations stays well below this.
pub const ALGEBRAIC: f64 = 1e-10;

/// Checks limited by time discretization (RK4 trajectories, finite
/// differences, centered-difference energy rates).
pub const ODE: f64 = 1e-6;

/// Relative singular-value gap below which divided differences
/// (σ_k² − σ_l²)/(σ_k^{2/N} − σ_l^{2/N}) switch to their analytic limit.
/// Below this gap the quotient loses precision catastrophically; above it
/// the log1p/expm1 evaluation is accurate to a few ulps.
pub const DEGENERATE_GAP_REL: f64 = 1e-9;

/// Entries of Λ must exceed this for a state to count as full rank.
pub const FULL_RANK_MIN: f64 = 1e-14;

/// Symmetry defect allowed in imbalance matrices and other symmetrized
/// quantities before construction fails.
pub const SYMMETRY: f64 = 1e-12;

/// Orthogonality defect ‖QᵀQ − I‖_F allowed when validating frames supplied
/// to constructors. Looser than `ALGEBRAIC` because frames are often the
/// product of long computations.
pub const FRAME_ORTHOGONALITY: f64 = 1e-8;

/// Relative threshold below which a singular value counts as zero when
/// deciding rank (polar factor completion, effective-rank diagnostics).
pub const RANK_REL: f64 = 1e-12;

/// Most negative eigenvalue tolerated by the psd square root, relative to
/// the largest eigenvalue magnitude. Anything smaller is clamped to zero.
pub const PSD_NEG_REL: f64 = 1e-10;

/// Balance residual beyond which a state is rejected as an initial condition
/// for dynamics that are only defined on the balanced manifold.
pub const BALANCE_PRECONDITION: f64 = 1e-6;
