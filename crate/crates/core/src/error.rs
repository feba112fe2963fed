//! Crate-wide error type.
//!
//! One enum covers every failure mode of the numerical pipeline so the
//! CLI can report a stable machine-readable `kind` for each.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("no bracket: f({lo}) and f({hi}) have the same sign")]
    NoBracket { lo: f64, hi: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e}) in {context}")]
    NoConvergence {
        context: String,
        iterations: usize,
        residual: f64,
    },
    #[error("singular Jacobian in {0}")]
    SingularJacobian(String),
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),
    #[error("Jordan transform is not invertible")]
    NonInvertibleTransform,
    #[error("evaluation failure: {0}")]
    EvaluationFailure(String),
    #[error("degenerate denominator in {0}")]
    DegenerateDenominator(String),
    #[error("point is not on the switching surface: |h| = {h:e}")]
    NotOnSurface { h: f64 },
    #[error("integrator step failure at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },
    #[error("trajectory divergence at t = {t}: |state| = {norm:e}")]
    Divergence { t: f64, norm: f64 },
    #[error("Zeno guard tripped: more than {max_events} events")]
    ZenoGuard { max_events: usize },
    #[error("u and w are linearly dependent (angle {angle:e} rad)")]
    DependentVectors { angle: f64 },
    #[error("not at a codimension-two point: |H(X*)| = {h:e}, |alpha| = {alpha:e}")]
    NotCodimTwo { h: f64, alpha: f64 },
    #[error("Hopf coefficient below resolution: |l1| = {value:e}")]
    NearZeroCoefficient { value: f64 },
    #[error("fold is not visible: second Lie derivative = {value:e}")]
    NotVisibleFold { value: f64 },
    #[error("point is on the wrong side: H = {h:e} >= 0")]
    WrongSide { h: f64 },
    #[error("degenerate Lie derivative at the fold: {0}")]
    DegenerateLie(String),
    #[error("backward orbit did not reach the switching surface")]
    NoBackwardIntersection,
    #[error("sliding orbit left the sliding region before reaching the fold section")]
    SlidingExitBeforeOmega,
    #[error("section is not transverse to the flow at the anchor point")]
    SectionNotTransverse,
    #[error("lost the equilibrium during continuation at {param} = {value}")]
    LostEquilibrium { param: String, value: f64 },
    #[error("lost track of the Poincare-map eigenvalue near -1 (closest: {closest})")]
    EigenvalueTrackingLost { closest: f64 },
    #[error("iterate landed within {tol:e} of the switching line; branch undecided")]
    UndecidedBranch { tol: f64 },
    #[error("syntax error at position {position}: expected {expected}")]
    SyntaxError { position: usize, expected: String },
    #[error("unknown identifier `{name}` at position {position}")]
    UnknownIdentifier { name: String, position: usize },
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("config schema error: {0}")]
    SchemaError(String),
    #[error("switching function has a non-regular surface: |grad H| = {norm:e}")]
    NonregularSurface { norm: f64 },
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NoBracket { .. } => "NoBracket",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::SingularJacobian(_) => "SingularJacobian",
            Error::DegenerateSpectrum(_) => "DegenerateSpectrum",
            Error::NonInvertibleTransform => "NonInvertibleTransform",
            Error::EvaluationFailure(_) => "EvaluationFailure",
            Error::DegenerateDenominator(_) => "DegenerateDenominator",
            Error::NotOnSurface { .. } => "NotOnSurface",
            Error::StepFailure { .. } => "StepFailure",
            Error::Divergence { .. } => "Divergence",
            Error::ZenoGuard { .. } => "ZenoGuard",
            Error::DependentVectors { .. } => "DependentVectors",
            Error::NotCodimTwo { .. } => "NotCodimTwo",
            Error::NearZeroCoefficient { .. } => "NearZeroCoefficient",
            Error::NotVisibleFold { .. } => "NotVisibleFold",
            Error::WrongSide { .. } => "WrongSide",
            Error::DegenerateLie(_) => "DegenerateLie",
            Error::NoBackwardIntersection => "NoBackwardIntersection",
            Error::SlidingExitBeforeOmega => "SlidingExitBeforeOmega",
            Error::SectionNotTransverse => "SectionNotTransverse",
            Error::LostEquilibrium { .. } => "LostEquilibrium",
            Error::EigenvalueTrackingLost { .. } => "EigenvalueTrackingLost",
            Error::UndecidedBranch { .. } => "UndecidedBranch",
            Error::SyntaxError { .. } => "SyntaxError",
            Error::UnknownIdentifier { .. } => "UnknownIdentifier",
            Error::UnknownModel(_) => "UnknownModel",
            Error::UnknownParameter(_) => "UnknownParameter",
            Error::SchemaError(_) => "SchemaError",
            Error::NonregularSurface { .. } => "NonregularSurface",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
