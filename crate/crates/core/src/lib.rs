//! Embodied chain-of-thought annotation toolkit.
//!
//! Turns robot trajectory datasets into per-step reasoning chains (task,
//! plan, subtask, movement, gripper pixels, visible objects), and models
//! the serving cost of such chains.

pub mod annotators;
pub mod chain;
pub mod data;
pub mod exec;
pub mod hash;
pub mod intervention;
pub mod motion;
pub mod pipeline;
pub mod projection;
pub mod scheduler;
pub mod synth;
