//! Centralized numerical tolerances.
//!
//! Every threshold used to decide a structural question (is a coefficient
//! zero, does an assumption hold, is a splitting hyperbolic) lives here with
//! its rationale, so the decisions are consistent across modules.

/// A relative-degree coefficient is treated as structurally zero when its
/// magnitude is below this factor times the product of the norms of its
/// factors. Exact zeros produced by construction sit at roundoff level
/// (~1e-16 relative); genuinely nonzero coefficients of interest are far
/// above 1e-12.
pub const DEGREE_COEFFICIENT_REL: f64 = 1e-12;

/// Relative residual under which location- or time-invariance of the output
/// maps (A5) and the output-switching factorization P = P_o C (A6) are
/// accepted. Models that satisfy these by construction are exact; the slack
/// only absorbs serialization roundoff.
pub const ASSUMPTION_REL: f64 = 1e-9;

/// Maximum relative off-diagonal block norm accepted when one shared
/// transform must block-diagonalize every location's inverse state matrix
/// (A9).
pub const DECOUPLING_REL: f64 = 1e-8;

/// Minimum distance of any decoupled eigenvalue magnitude from the unit
/// circle (A9 requires a hyperbolic stable/unstable splitting).
pub const HYPERBOLICITY_MARGIN: f64 = 1e-6;

/// Default cap on relative degree searches. The enumeration cost grows as
/// |Q|^(m+1), and previews deeper than this have no explicit inverse here
/// anyway.
pub const DEGREE_CAP: usize = 6;

/// Relative tolerance used when validating candidate solutions of implicit
/// inversion steps against re-simulation.
pub const IMPLICIT_SOLVE_REL: f64 = 1e-9;

/// Relative residual above which a force-zeroing pad value is rejected
/// because the forcing has a component outside the input direction.
pub const PAD_RESIDUAL_REL: f64 = 1e-9;
