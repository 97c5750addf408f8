//! Command-line front end and file formats for the lifelong experiments.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::CliError;
