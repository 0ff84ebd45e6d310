//! Radar 3D multi-object tracking with Monte-Carlo dropout uncertainty.
//!
//! The pipeline per frame: fuse stochastic detector passes into detections
//! with spread ([`fusion`]), forecast every live track with a constant-velocity
//! model or an attention predictor sampled with dropout ([`motion`]), match
//! detections to tracks in two stages using Mahalanobis distance and Doppler
//! consistency ([`association`]), then run the Kalman correction and track
//! life cycle ([`tracking`]). [`sim`] produces synthetic radar scenarios,
//! [`metrics`] scores tracker output with AMOTA/AMOTP, and [`harness`] wires
//! it all into files and a CLI.

pub mod association;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod motion;
pub mod rng;
pub mod sim;
pub mod tracking;

pub use error::{Error, Result};
pub use geometry::{bev_iou, radial_velocity, yaw_normalize, Box3D, Covariance7, Detection, KinematicState, Pose};
