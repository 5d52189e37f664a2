//! Barriers, measurement-adapted certificates, the QP filter and Monte Carlo verification.

pub mod barrier;
pub mod filter;
pub mod qp;
pub mod verify;

pub use barrier::{Barrier, BarrierSet};
pub use filter::{filter_rows, mcbf_value, safety_filter, FilterDiagnostics, Mcbf};
pub use verify::{
    clopper_pearson, estimate_barrier_constants, theoretical_bound, verify_safety_mc, EpisodeSafety,
    EpisodeSource, VerificationReport, VerifyParams,
};
