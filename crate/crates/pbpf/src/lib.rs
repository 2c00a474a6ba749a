//! Pose tracking experiments on top of `pbpf-core`: scenario generation,
//! run logs, offline replay of the three trackers and aggregate reporting.
// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod harness;
pub mod parallel;
pub mod replay;
pub mod runlog;
pub mod scenario;

pub use pbpf_core as core;
