//! Library side of the `tpsurf` binary: argument parsing, run configuration,
//! JSON reports and the regularity battery.

pub mod commands;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod report;
pub mod verify;
