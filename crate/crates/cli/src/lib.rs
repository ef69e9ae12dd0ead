//! Experiment drivers behind the `coalsis` binary.

pub mod commands;
pub mod config;
pub mod output;
