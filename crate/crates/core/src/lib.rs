//! Multiview consistency training for monocular 3D human-pose lifting.
//!
//! The crate is organised bottom-up:
//!
//! - [`types`]: skeletons, poses, sequences and multiview samples.
//! - [`geometry`]: sequence-level similarity (Procrustes) alignment.
//! - [`camera`]: pinhole projection and the normalized image convention.
//! - [`losses`]: consistency, reprojection and 3D supervision objectives with
//!   analytic gradients.
//! - [`metrics`]: MPJPE / PA-MPJPE and per-activity reports.
//! - [`data`]: synthetic motion and rig generation, keypoint conversion, dataset files.
//! - [`model`]: a small fully connected 2D-to-3D lifter with a hand-written backward pass.
//! - [`trainer`]: Adam and the multiview training loop.
//! - [`harness`]: experiment drivers, result tables and SVG plots.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod data;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
