use thiserror::Error;

/// Errors surfaced by the kinetic solver and its verification helpers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("direction is not a unit vector (|sigma| = {norm})")]
    NonUnitDirection { norm: f64 },

    #[error("degenerate reference direction with angular truncation requested")]
    DegenerateDirection,

    #[error("angular law is not normalized: ||b||_1 = {norm} (expected 1 within 1e-9)")]
    UnnormalizedAngularLaw { norm: f64 },

    #[error("Maxwellian case: thresholds not applicable, see maxwell module")]
    MaxwellianCase,

    #[error("beta_{{k0}} <= 1: lower-bound propagation unavailable (alpha = {alpha} >= alpha_star = {alpha_star})")]
    LowerBoundUnavailable { alpha: f64, alpha_star: f64 },

    #[error("c_{{alpha,1+gamma/2,d}} <= 0: no uniform moment bound (alpha = {alpha} >= alpha0 = {alpha0})")]
    MomentBoundUnavailable { alpha: f64, alpha0: f64 },

    #[error("majorant too small: observed pair rate {rate} exceeds majorant {majorant}")]
    MajorantExceeded { rate: f64, majorant: f64 },

    #[error("ensemble extinct (fewer than 2 particles left)")]
    Extinct,

    #[error("moment of order {order} missing from record")]
    MissingMoment { order: f64 },

    #[error("quadrature did not converge on [{a}, {b}]")]
    QuadratureNonConvergence { a: f64, b: f64 },

    #[error("not enough data: needed {needed}, got {got}")]
    NotEnoughData { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field,
            reason: reason.into(),
        }
    }
}
