//! Distributed multi-view compressive phase retrieval with sparse outliers.
//!
//! The crate is split along the recovery pipeline:
//!
//! * [`model`] synthesizes seeded scenarios (signal, masks, sparse Bernoulli
//!   sensing matrices, outliers) and evaluates the phaseless measurement model.
//! * [`disjunct`] checks the combinatorial conditions on group-stacked sensing
//!   matrices (exact disjunctness and the support-conditional private-row count).
//! * [`support`] is the first server stage: local zero-count scores and the
//!   group-wise counting rule for the global support.
//! * [`amplitude`] is the second server stage: private-row ratios and the
//!   majority vote for `|s_n|`.
//! * [`local`] is the device stage: ternary sign/mask recovery by exhaustive
//!   enumeration or the relaxed two-stage projection.
//! * [`pipeline`] composes the stages directly, [`netsim`] runs the same flow
//!   as a star-topology message exchange with a communication trace.
//! * [`harness`] runs Monte Carlo trials and sweeps and writes CSV tables.

pub mod amplitude;
pub mod disjunct;
pub mod error;
pub mod harness;
pub mod local;
pub mod model;
pub mod netsim;
pub mod pipeline;
pub mod sparse;
pub mod support;

pub use error::{Error, Result};
