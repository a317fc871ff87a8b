//! Experiment harness: configuration, sweeps and summary tables.

pub mod commands;
pub mod config;
pub mod report;
pub mod sweep;
