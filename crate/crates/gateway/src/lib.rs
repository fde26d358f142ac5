//! Network side of the teleoperation stack.
//!
//! A fixed-rate [`control`] loop owns the simulated rig. Clients connect over
//! TCP or WebSocket with the same JSON [`schema`], declare a role, and their
//! commands go through [`roles`] into the loop's queue. State snapshots fan
//! out through the [`hub`], one bounded outbox per client.
#![forbid(unsafe_code)]

pub mod client;
pub mod control;
pub mod hub;
pub mod roles;
pub mod schema;
pub mod server;

pub use control::{ControlLoop, LoopConfig, LoopStats};
pub use schema::{Body, Role, WireMessage};
pub use server::{Gateway, GatewayConfig};
