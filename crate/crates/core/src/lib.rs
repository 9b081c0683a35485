//! Linear precoder design for MIMO channels with finite-alphabet inputs and
//! statistical channel-state information.
//!
//! The crate covers the full pipeline:
//! - [`constellation`]: normalized signal alphabets and group enumeration;
//! - [`channel`]: the jointly correlated Rice statistics, sampling, and the
//!   separable and ray-based generators;
//! - [`metrics`]: the finite-alphabet mutual-information / MMSE kernel, plus
//!   the Monte Carlo exact-MI oracle;
//! - [`detequiv`]: the deterministic-equivalent fixed point and the
//!   asymptotic mutual-information expression it feeds;
//! - [`precoder`]: the per-group precoder structure, its gradients, and the
//!   iterative optimizer with backtracking line search and multi-start;
//! - [`special`]: fast paths for separable correlation, deterministic
//!   channels, and large arrays with sparse beam-domain coupling;
//! - [`complexity`]: exact addition-count accounting for per-group versus
//!   complete-search evaluation.

pub mod channel;
pub mod complexity;
pub mod constellation;
pub mod detequiv;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod precoder;
pub mod special;

pub use channel::{
    kronecker_factors, kronecker_statistics, ray_statistics, ChannelStatistics, CorrelationPair,
    Ray, RayChannel, RiceFactor,
};
pub use complexity::{addition_count, complete_count, format_count, CostModel};
pub use constellation::{Constellation, ConstellationKind, ENUMERATION_CAP};
pub use detequiv::{
    asymptotic_mi, solve_fixed_point, AsymptoticMI, DetEquivState, FixedPointOptions, OmegaSource,
};
pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C64};
pub use metrics::{
    assemble_omega, exact_ergodic_mi, group_error_covariance, group_metrics,
    group_mutual_information, vector_channel_metrics, ChannelMetrics, GroupMetrics, MiEstimate,
    NoiseExpectation, QUADRATURE_GRID_CAP,
};
pub use precoder::{
    gradients, optimize, pair_subchannels, retract_unitary, stationarity_residual, GroupGradient,
    OptimizationTrace, OptimizerOptions, Precoder, StreamPartition,
};
pub use special::{
    deterministic_mi, kronecker_fixed_point, massive_fixed_point, KroneckerState, MassiveState,
};
