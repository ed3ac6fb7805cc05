//! Command layer of the experiment runner: config loading, input resolution,
//! the five subcommands, and atomic artifact persistence.

pub mod commands;
pub mod io;
pub mod report;
