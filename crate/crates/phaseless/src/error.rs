use thiserror::Error;

/// Errors produced by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty slice: |z| = {z} lies outside the sphere of radius {b}")]
    EmptySlice { z: f64, b: f64 },

    #[error("degenerate chord: endpoints coincide")]
    DegenerateChord,

    #[error("endpoints are not coplanar: x3 = {0}, y3 = {1}")]
    NonCoplanar(f64, f64),

    #[error("point ({0}, {1}, {2}) does not lie on the measurement sphere")]
    OffSphere(f64, f64, f64),

    #[error("chord misses the slice circle: |s| = {s} >= {b_z}")]
    ChordMissesCircle { s: f64, b_z: f64 },

    #[error("phantom violates the smallness gate: {0}")]
    SmallnessGate(String),

    #[error("ray shooting failed to converge after {iters} iterations (miss {miss:.3e})")]
    ShootingDiverged { iters: usize, miss: f64 },

    #[error("caustic or step-size breakdown: geodesic jacobian J = {0} is not positive")]
    NonPositiveJacobian(f64),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("inconsistent data: {0}")]
    InconsistentData(String),

    #[error("frequency span too short: {0}")]
    Span(String),

    #[error("missing slice: no observables at z = {0}")]
    MissingSlice(f64),

    #[error("unsupported grid: {0}")]
    UnsupportedGrid(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("iteration diverged after {iters} sweeps (residual {residual:.3e})")]
    IterationDiverged { iters: usize, residual: f64 },

    #[error("solver failed to converge after {iters} iterations (residual {residual:.3e})")]
    SolverDiverged { iters: usize, residual: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("file format: {0}")]
    Format(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::SmallnessGate(_) => 2,
            Error::Io(_) | Error::Format(_) => 4,
            _ => 3,
        }
    }
}
