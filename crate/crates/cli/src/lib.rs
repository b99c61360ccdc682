//! Command-line driver pieces: configuration, CSV logs, SVG plots and the
//! subcommands.

pub mod commands;
pub mod config;
pub mod log;
pub mod plot;
