//! Orientation estimation for kinematic chains from inertial measurements.
//!
//! The crate covers the full pipeline:
//!
//! - [`math`]: quaternion and 3-vector algebra (Hamilton convention,
//!   scalar-first storage).
//! - [`kinematics`]: parent-array chain encoding and forward kinematics.
//! - [`rcmg`]: the random chain motion generator: randomized chains, smooth
//!   random motions, spring-damper IMU attachment, gyroscope/accelerometer
//!   synthesis, and `(X, Y)` training-pair assembly.
//! - [`net`]: the message-passing recurrent estimator: per-node shared
//!   parameters, stacked GRU cells with layer normalization, and a unit
//!   quaternion output head.
//! - [`training`]: angle-squared loss, exact backpropagation through time,
//!   Adam with cosine decay, and the training loop.
//! - [`eval`]: MAE metric with warm-up exclusion, sampling-rate resampling,
//!   a dead-reckoning reference predictor, and ablation grids.
//! - [`bench`]: per-step latency measurement for the real-time contract.
//! - [`formats`]: checksummed binary persistence for datasets and weights.

// Numeric kernels co-index several arrays at once; plain index loops read
// better there than zipped iterator chains.
#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod eval;
pub mod formats;
pub mod kinematics;
pub mod math;
pub mod net;
pub mod rcmg;
pub mod signal;
pub mod training;

pub use kinematics::{BodyPose, ChainConfig, ImuAttachment, ParentArray};
pub use math::{Quat, Vec3};
pub use net::{RingParams, RingState};
pub use rcmg::{AblationFlags, RcmgRanges, TrainingPair};
