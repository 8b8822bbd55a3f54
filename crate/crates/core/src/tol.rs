//! Numerical tolerances used across the crate.
//!
//! Thresholds are relative unless stated otherwise; each constant names the
//! single place a bound is pinned so tests and library agree on it.

/// Relative Frobenius tolerance for structural predicates
/// (symplectic check, quantum positivity, physical-realizability residuals).
pub const STRUCT_REL: f64 = 1e-9;

/// Lyapunov solve residual bound: `‖AX+XAᵀ+W‖_F ≤ ALE_RESIDUAL·(1+‖W‖_F)`.
pub const ALE_RESIDUAL: f64 = 1e-10;

/// A matrix counts as Hurwitz only if its spectral abscissa is below
/// `-HURWITZ_MARGIN`; near-marginal matrices are rejected rather than solved.
pub const HURWITZ_MARGIN: f64 = 1e-12;

/// Singular values below `RANK_REL` times the largest are treated as zero
/// when orthonormalizing subspace bases.
pub const RANK_REL: f64 = 1e-10;

/// Verdict threshold on the closed-loop spectral abscissa: stabilizing below
/// `-STABILIZING_ABSCISSA`, marginal within `±STABILIZING_ABSCISSA`.
pub const STABILIZING_ABSCISSA: f64 = 1e-9;

/// Relative guard on the restricted Hessian spectrum: the continuation
/// right-hand side refuses to invert when `min |eig| < HESSIAN_GUARD · max |eig|`.
pub const HESSIAN_GUARD: f64 = 1e-10;

/// Default corrector tolerance on the gradient norm along the continuation.
pub const CORRECTOR: f64 = 1e-7;
