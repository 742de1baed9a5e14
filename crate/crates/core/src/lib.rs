//! Targetless LiDAR-camera extrinsic calibration: rigid transforms, pinhole
//! projection, geometric losses, dataset synthesis, direct optimization and
//! evaluation.

pub mod camera_projection;
pub mod cli;
pub mod dataset;
pub mod depth_io;
pub mod evaluation;
pub mod losses;
pub mod nn_grid;
pub mod optimizer;
pub mod se3;
