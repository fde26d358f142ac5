//! Core building blocks for a bilateral leader/follower teleoperation stack.
//!
//! - [`kinematics`]: DH chains, forward kinematics, joint vectors and limits.
//! - [`servo_wire`]: Protocol 2.0 servo bus frames, CRC and a streaming decoder.
//! - [`sync`]: offset calibration, the leader/follower position maps and the
//!   autonomous/intervention mode machine.
//! - [`sim`]: rate-limited simulated arms and the device contract.
//! - [`episode`]: episode recording, persistence, dataset mixing and
//!   intervention statistics.
#![forbid(unsafe_code)]

pub mod episode;
pub mod error;
pub mod kinematics;
pub mod kv;
pub mod servo_wire;
pub mod sim;
pub mod sync;

pub use error::{Error, Result};
pub use kinematics::{DhRow, DhTable, JointLimits, JointVector, Pose};
