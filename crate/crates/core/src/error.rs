//! Crate-wide error type.

/// Errors raised by model construction, coefficient evaluation and the
/// numerical solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A mathematical precondition was violated (e.g. |Q| > 1).
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Effective potential is undefined because the curvature parameter
    /// vanished (b = G/d with d ~ 0).
    #[error("singular effective potential: d = {d:.3e}")]
    SingularPotential { d: f64 },

    /// The pre-normalization iterate collapsed to zero length; the trial
    /// cannot continue.
    #[error("degenerate simulation state: {0}")]
    DegenerateState(String),

    /// An explicit finite-volume step was asked to exceed its stability bound.
    #[error("step size {dt:.3e} violates stability bound {bound:.3e}")]
    StepSize { dt: f64, bound: f64 },

    /// An order-parameter path was queried outside the time range it covers.
    #[error("path lookup at t = {t} outside covered range [0, {t_max}]")]
    PathLookup { t: f64, t_max: f64 },

    /// Mass accumulated near the grid boundary; the spatial domain is too
    /// small for the dynamics.
    #[error("boundary mass {mass:.3e} exceeds {limit:.3e}: domain too small")]
    BoundaryLeak { mass: f64, limit: f64 },

    /// Two gridded quantities were combined but live on different grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// NaN, divergence, or a broken numerical invariant.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The operation is not defined for the given inputs (e.g. the closed
    /// order-parameter ODE with a nonzero regularizer).
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
