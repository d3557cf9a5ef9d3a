use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dims must be >= 1, got {0:?}")]
    EmptyDims([usize; 3]),
    #[error("spacing must be > 0, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("element count mismatch: expected {expected}, found {found}")]
    ElementCount { expected: usize, found: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid window: hu_lo ({lo}) must be < hu_hi ({hi})")]
    BadWindow { lo: f64, hi: f64 },
    #[error("mu_scale must be > 0, got {0}")]
    BadMuScale(f64),
    #[error("point is behind camera (z = {0} mm)")]
    BehindCamera(f64),
    #[error("zero-length direction")]
    ZeroDirection,
    #[error("spherical harmonic degree must be >= 1, got {0}")]
    BadDegree(usize),
    #[error("no sampling mass: total density is zero")]
    NoSamplingMass,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("feature dimension mismatch: model has k = {model}, set has k = {set}")]
    FeatureDim { model: usize, set: usize },
    #[error("zero-sized image")]
    EmptyImage,
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("source and destination coincide")]
    DegenerateRay,
    #[error("empty view list")]
    NoViews,
    #[error("non-finite gradient in parameter group `{0}`")]
    NonFiniteGradient(&'static str),
    #[error("shape mismatch in parameter group `{0}`")]
    ShapeMismatch(&'static str),
    #[error("intermediates do not match the gradient image")]
    MismatchedIntermediates,
    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("registration loss became non-finite at iteration {iteration}")]
    RegistrationDiverged { iteration: usize, trace: Vec<f64> },
    #[error("empty landmark list")]
    NoLandmarks,
}

pub type Result<T> = core::result::Result<T, Error>;
