//! March-in-Chat style interactive prompting for remote embodied referring
//! expression tasks on graph-based house worlds.

pub mod codebook;
pub mod world;
pub mod perceiver;
pub mod agent;
pub mod lm_client;
pub mod metrics;
pub mod planner;
pub mod runner;
pub mod selector;
