//! Experiment driver behind the `wgdflow` binary: builds targets from
//! config files, runs the samplers, and writes CSV artifacts.

pub mod config;
pub mod experiments;

pub use config::Config;
