//! Safe control under bounded measurement and process noise.
//!
//! Control-affine environments, noisy measurement models, measurement-adapted
//! barrier certificates with a QP safety filter, uncertainty tubes, weighted
//! dynamics learning and Monte Carlo verification.

pub mod cli;
pub mod envs;
pub mod geometry;
pub mod harness;
pub mod learning;
pub mod error;
pub mod math;
pub mod measurement;
pub mod safety;
pub mod sim;

pub use error::{Error, Result};
