//! Learning workflows over the sync engine at desk scale.
//!
//! - [`task`]: planar reach tasks, goal placement and the reward logit.
//! - [`policy`]: scripted experts and lookup behavior cloning.
//! - [`intervene`]: scripted pedal operators.
//! - [`rollout`]: the environment loop and evaluation.
//! - [`replay`] and [`qlearn`]: symmetric replay and tabular HITL Q-learning.
//! - [`experiment`]: data collection and the mixing / HITL experiments.
#![forbid(unsafe_code)]

pub mod experiment;
pub mod intervene;
pub mod policy;
pub mod qlearn;
pub mod replay;
pub mod results;
pub mod rollout;
pub mod task;
