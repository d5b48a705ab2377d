//! Single-object tracking on raw LIDAR point clouds.
//!
//! A template point cloud (the target, cut out of the first frame) and a
//! per-frame search cloud are embedded by a shared-weight point-cloud
//! encoder. A correlation module turns the pair of feature maps into
//! per-point similarity weights, a region-proposal head classifies
//! foreground points and regresses a bin-coded box per point, and a
//! closed-loop driver rolls the search area forward from each prediction.
//!
//! Everything runs on the CPU through a small dense-layer toolkit with
//! analytic, finite-difference-checked gradients. See the `book/` guide for
//! a chapter-by-chapter walkthrough.

pub mod cli;
pub mod config;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod nn;
pub mod rpn;
pub mod tracker;
pub mod train;
pub mod verify;
pub mod xcorr;

pub use error::{Error, Result};
