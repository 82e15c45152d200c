//! Library side of the `cardiotwin` command: configuration, artifact I/O,
//! the subcommands and SVG export.

pub mod artifact;
pub mod cli;
pub mod commands;
pub mod config;
pub mod svg;
