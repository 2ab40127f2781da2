//! Desk-scale furniture assembly benchmark.
//!
//! A kinematic world of furniture parts and a task-space gripper, driven at
//! 10 Hz by delta-pose actions, observed through simulated fiducial markers,
//! and scored by a sparse once-per-pair assembly reward.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod catalog;
pub mod controller;
pub mod dataset;
pub mod env;
pub mod error;
pub mod expert;
pub mod geometry;
pub mod image;
pub mod init;
pub mod perception;
pub mod reward;
pub mod workspace;
pub mod world;

pub use error::{Error, Result};
