use thiserror::Error;

/// Which end of a valid range a value fell off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Lower,
    Upper,
}

impl std::fmt::Display for Bound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bound::Lower => f.write_str("lower"),
            Bound::Upper => f.write_str("upper"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("size must be nonnegative, got {0}")]
    NegativeSize(f64),
    #[error("rate {value} violates the {bound} bound {limit} of the depolymerization range")]
    OutOfRange { value: f64, bound: Bound, limit: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("fragmentation column {column} has no mass to redistribute (kernel/grid mismatch)")]
    EmptyColumn { column: usize },
    #[error("time step {dt} exceeds the stability limit {limit}")]
    StepTooLarge { dt: f64, limit: f64 },
    #[error("monomer concentration became negative ({v}) at t={t}")]
    BlowUp { t: f64, v: f64 },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("leaked mass {leaked} exceeds tolerance {allowed} at t={t}; try x_max >= {x_max_suggested}")]
    LeakOverflow {
        t: f64,
        leaked: f64,
        allowed: f64,
        x_max_suggested: f64,
    },
    #[error("mass conservation drifted by {drift:e} (relative) at t={t}")]
    ConservationDrift { t: f64, drift: f64 },
    #[error("wrong regime: {0}")]
    Regime(String),
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("no sign change of the principal eigenvalue: {0}")]
    NoSignChange(String),
    #[error("extension condition violated: lambda={lambda} <= -B(x0)+d'(x0)={threshold}")]
    ExtensionCondition { lambda: f64, threshold: f64 },
    #[error("no steady state at this mass: M={m} <= Vbar={vbar}")]
    MassTooSmall { m: f64, vbar: f64 },
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
