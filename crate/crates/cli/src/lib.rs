//! Command-line front end: configuration, run orchestration and artifact output.

pub mod commands;
pub mod config;
pub mod output;
