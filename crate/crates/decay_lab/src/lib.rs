//! Library side of the `decay_lab` command-line tool: configuration loading
//! and the subcommands, usable from tests without spawning a process.

pub mod cli;
pub mod commands;
pub mod config;
