//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the analysis and simulation layers.
#[derive(Error, Debug)]
pub enum Error {
    /// A user-supplied field returned a non-finite value or panicked.
    #[error("field `{field}` returned a non-finite value at {location}")]
    EvaluationFailure { field: &'static str, location: String },

    /// An analytic Jacobian disagrees with central finite differences.
    #[error("analytic Jacobian `{which}` deviates from finite differences by {max_rel:.3e} (> {tol:.1e}) at {location}")]
    JacobianMismatch {
        which: &'static str,
        location: String,
        max_rel: f64,
        tol: f64,
    },

    /// Newton iteration failed to reach the requested tolerance.
    #[error("Newton iteration did not converge after {iters} iterations (residual {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64 },

    /// A linear solve against a (near-)singular Jacobian was requested.
    #[error("singular Jacobian: {context}")]
    SingularJacobian { context: String },

    /// The matrix has an eigenvalue with non-negative real part.
    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:.3e})")]
    NotHurwitz { abscissa: f64 },

    /// A Lyapunov eigenvalue pair a_i + a_j is numerically zero.
    #[error("ill-conditioned Lyapunov operator: eigenvalue pair sum {pair_sum:.3e} within {tol:.1e} of zero")]
    IllConditioned { pair_sum: f64, tol: f64 },

    /// The controllability Grammian is singular at this point.
    #[error("pair (A, F0) not controllable at {location}: rank {rank} < {dim} (Grammian singular)")]
    NotControllable {
        location: String,
        rank: usize,
        dim: usize,
    },

    /// Requested times do not lie on the precomputed grid.
    #[error("grid mismatch: {context}")]
    GridMismatch { context: String },

    /// The adaptive integrator reduced its step below the floor.
    #[error("stiffness failure: step size {step:.3e} below floor at t = {t:.6}")]
    StiffnessFailure { t: f64, step: f64 },

    /// A covariance block lost positive semi-definiteness.
    #[error("PSD loss: min eigenvalue {min_eig:.3e} at t = {t:.6}")]
    PsdLoss { t: f64, min_eig: f64 },

    /// The initial slow point exits the domain before one step.
    #[error("initial condition leaves the slow domain immediately")]
    LeftDomainImmediately,

    /// Too few usable grid points for the exponent fit.
    #[error("insufficient data for exponent fit: {usable} usable points, need {needed}")]
    InsufficientData { usable: usize, needed: usize },

    /// No clean separation between critical and stable spectrum.
    #[error("no spectral gap: {context}")]
    NoSpectralGap { context: String },

    /// Detected number of critical eigenvalues differs from the request.
    #[error("critical eigenvalue count {detected} does not match requested q = {requested}")]
    WrongCriticalCount { requested: usize, detected: usize },

    /// Experiment parameters violate the regime of validity.
    #[error("regime violation: {context}")]
    RegimeViolation { context: String },

    /// Query point outside the declared domain or metric-field support.
    #[error("point outside domain: {context}")]
    OutsideDomain { context: String },

    /// Bad experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numeric, 4 io.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
