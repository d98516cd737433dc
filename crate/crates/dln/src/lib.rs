//! A numerical laboratory for deep linear network training dynamics.
//!
//! The training state is a stack of d×d matrices 𝐖 = (W_N, …, W_1) living
//! "upstairs"; the observable is the end-to-end product W = W_N ⋯ W_1
//! "downstairs". The crate implements, with exact formulas wherever they
//! exist:
//!
//! - the layerwise gradient flow and its conserved imbalances ([`network`],
//!   [`flows`]),
//! - the closed equation for the end-to-end matrix on the balanced manifold
//!   and the depth-N Riemannian metric behind it ([`flows`], [`geometry`]),
//! - the orthonormal tangent basis upstairs, the block-tridiagonal pullback
//!   metric and submersion diagnostics ([`geometry`]),
//! - the orbit entropy, free energy and their gradients ([`thermo`]),
//! - Brownian motion in the depth-N geometry, Langevin dynamics with an
//!   anisotropy parameter splitting gauge and observable noise, the
//!   eigenvalue/matrix diffusion pair and the sphere curvature example
//!   ([`stochastic`]),
//! - an experiment harness with config-driven runs, CSV/JSON outputs and an
//!   invariant audit battery ([`harness`]).
//!
//! Every closed-form identity is paired with an independent numerical check
//! in [`oracle`]; the `audit` experiment and the acceptance test suite run
//! them end to end.

pub mod error;
pub mod flows;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod matops;
pub mod network;
pub mod oracle;
pub mod stats;
pub mod stochastic;
pub mod thermo;
pub mod tol;

pub use error::{DlnError, Result};
pub use matops::{Matrix, PolarPair, SvdTriple};
pub use network::{BalancedCoords, ImbalanceG, NetworkState, TangentStack};
