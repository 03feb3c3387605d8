//! Library half of the `lqnash` command-line tool: file formats and the
//! subcommand implementations.

pub mod commands;
pub mod io;
