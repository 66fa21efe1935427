//! Environments, Q-learning and the prune/rewind/retrain pipeline.

pub mod agent;
pub mod env;
pub mod eval;
pub mod pipeline;
pub mod qnet;
pub mod replay;
