//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors produced by constellation handling, channel construction, the
/// fixed-point solvers, and the precoder optimizer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported constellation: kind {kind} with cardinality {m}")]
    UnsupportedConstellation { kind: String, m: usize },

    #[error("enumeration of {required} signal vectors exceeds the cap of {cap}")]
    EnumerationCapExceeded { required: u128, cap: u128 },

    #[error("tensor quadrature grid of {required} nodes exceeds the cap of {cap}")]
    QuadratureGridTooLarge { required: u128, cap: u128 },

    #[error("Monte Carlo noise expectation needs at least 100 samples, got {0}")]
    TooFewNoiseSamples(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not unitary (deviation {deviation:.3e} exceeds {tol:.1e})")]
    NotUnitary { deviation: f64, tol: f64 },

    #[error("coupling matrix must be entrywise nonnegative")]
    NegativeCoupling,

    #[error("coupling matrix is all-zero but the Rice factor is finite")]
    ZeroCouplingFiniteRice,

    #[error("line-of-sight component is zero but the Rice factor is positive")]
    ZeroLosPositiveRice,

    #[error("cannot sample a realization of a purely deterministic channel")]
    DeterministicChannel,

    #[error("operation requires a finite Rice factor")]
    InfiniteRice,

    #[error("operation requires an infinite Rice factor (deterministic channel)")]
    FiniteRice,

    #[error("ray model needs at least one propagation path")]
    EmptyPathList,

    #[error("eigenvalue vector must be nonnegative and not all zero")]
    InvalidEigenvalues,

    #[error("group size {n_s} does not divide the stream count {n_t}")]
    GroupSizeMismatch { n_s: usize, n_t: usize },

    #[error("stream partition is inconsistent: {0}")]
    InvalidPartition(String),

    #[error("negative subchannel gain {0:.3e} passed to a group metric")]
    NegativeGain(f64),

    #[error("fixed point did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("sparse line-of-sight pattern yields a non-diagonal equivalent channel")]
    NonDiagonalEquivalent,

    #[error("all {0} optimizer restarts failed")]
    AllRestartsFailed(usize),

    #[error("power budget must be positive and finite, got {0}")]
    InvalidPower(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
