//! Processing pipeline for large indoor scenes captured as 360° video from
//! one or more drone flights and reconstructed block by block.
//!
//! The crate covers the geometric stages around the (external) structure
//! from motion and Gaussian splat training steps:
//!
//! - [`projection`]: equirectangular frames to eight 90° side cube faces.
//! - [`maskgen`]: drone-body mask dilation, propeller ellipses, naive fill.
//! - [`partition`]: the `mSnB` flight/block split with overlapping blocks.
//! - [`features`]: scale-invariant keypoints and the match-count frame
//!   similarity vote used to discover cross-flight overlaps.
//! - [`align`]: coarse-to-fine Sim(3) alignment of adjacent blocks.
//! - [`blocksel`]: spline trajectories and closest-block selection.
//! - [`metrics`]: PSNR, SSIM and trajectory alignment error.
//! - [`synth`]: synthetic scenes with exact ground truth.
//! - [`scene_io`]: poses, point clouds, manifests and their file formats.

pub mod align;
pub mod blocksel;
pub mod error;
pub mod features;
pub mod maskgen;
pub mod metrics;
pub mod partition;
pub mod projection;
pub mod scene_io;
pub mod synth;

pub use error::{Error, Result};
