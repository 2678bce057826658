//! Energy management for an off-grid microgrid: simulator, rule-based and
//! MILP-based controllers, and model-based reinforcement learning agents.

pub mod baseline;
pub mod data;
pub mod harness;
pub mod lp;
pub mod mpc;
pub mod nn;
pub mod rl;
pub mod sim;
