// SPDX-License-Identifier: MIT OR Apache-2.0

//! File formats, reports, and the command-line surface for the task-vector
//! decomposition toolkit. The library half exists so integration tests can
//! read and write the same files the binary does.

pub mod manifest;
pub mod report;
pub mod run;
pub mod tvt;

pub use run::{run, Cli, CliError};
