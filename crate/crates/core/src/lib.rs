//! Physics-based 6D pose tracking core.
//!
//! Everything here is allocation-only `no_std`: pose algebra
//! ([`geometry`]), the quasi-static pusher–slider motion model
//! ([`physics`]), the synthetic single-snapshot observer ([`observer`]), the
//! physics-based particle filter ([`filter`]) and the two comparison trackers
//! ([`baselines`]). Randomness always flows through explicit per-particle
//! streams ([`rng`]) so results never depend on thread scheduling.
#![no_std]
// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod baselines;
pub mod filter;
pub mod geometry;
pub mod observer;
pub mod physics;
pub mod rng;

mod error;

pub use error::Error;
pub use geometry::{pose_error, NoiseSpec, Pose, PoseError, Quat, Vec3};
