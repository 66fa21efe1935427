pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod delta;
pub mod error;
pub mod network;
pub mod pruning;
pub mod report;
pub mod rl;
pub mod tensor;

pub use error::{Error, Result};
