use thiserror::Error;

/// Errors raised by model construction, simulation, inversion, and learning.
///
/// Variants that correspond to a violated model assumption name it (A2..A9b)
/// so a caller can report which structural requirement failed.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A switching signature fell outside every location's signature set.
    #[error("no location matches signature {delta:?} at step {k} (partition does not cover the reached state)")]
    NoLocation { k: usize, delta: Vec<u8> },

    /// Matrix or signal dimensions are inconsistent.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A time index left the range on which the schedule is defined.
    #[error("step {k} is outside the schedule horizon of {horizon} steps")]
    HorizonOverflow { k: usize, horizon: usize },

    /// Model is not single-input single-output (assumption A2).
    #[error("model must be SISO (assumption A2): n_u = {n_u}, n_y = {n_y}")]
    NotSiso { n_u: usize, n_y: usize },

    /// Relative degree search exceeded its enumeration cap.
    #[error("relative degree exceeds the search cap {cap}: no candidate up to the cap has a nonzero input coefficient for every location sequence")]
    DegreeExceedsCap { cap: usize },

    /// A structural assumption required by the requested operation fails.
    #[error("assumption {assumption} does not hold: {detail}")]
    AssumptionViolated { assumption: &'static str, detail: String },

    /// The model's actual relative degree differs from the one the requested
    /// explicit inverse formula is valid for.
    #[error("wrong relative degree: operation requires {required}, model has {actual}")]
    WrongDegree { required: usize, actual: usize },

    /// No constant similarity transform block-diagonalizes every location's
    /// inverse state matrix (assumption A9).
    #[error("inverse dynamics are not decouplable by a shared transform (assumption A9): {detail}")]
    NotDecouplable { detail: String },

    /// An eigenvalue of the decoupled inverse dynamics sits on or too close to
    /// the unit circle (assumption A9 requires a hyperbolic splitting).
    #[error("inverse dynamics are not hyperbolic (assumption A9): eigenvalue magnitude {magnitude} is within {margin} of the unit circle")]
    NonHyperbolic { magnitude: f64, margin: f64 },

    /// An implicit inversion step admits no consistent solution.
    #[error("no consistent solution at step {k}: every assumed location sequence contradicts the switching it induces")]
    EmptySolutionSet { k: usize },

    /// No input value can zero the forcing term at a padding step.
    #[error("no force-zeroing pad value exists at step {k}: the input map is zero but the forcing is not")]
    NoForceZeroValue { k: usize },

    /// A numerical routine failed (singular solve, eigendecomposition, ...).
    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable process exit code for command line tools built on this crate.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::NoLocation { .. } => 10,
            Error::WrongDegree { .. } => 11,
            Error::NotDecouplable { .. } => 12,
            Error::NonHyperbolic { .. } => 13,
            Error::EmptySolutionSet { .. } => 14,
            Error::AssumptionViolated { .. } => 15,
            Error::DegreeExceedsCap { .. } => 16,
            Error::NoForceZeroValue { .. } => 17,
            _ => 1,
        }
    }
}
