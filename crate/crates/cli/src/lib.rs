//! Operator surface for the recognizer: dataset generation, training,
//! evaluation, single-image decoding and the lexicon radius sweep.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 data error,
//! 4 checkpoint error.

pub mod cli;
pub mod commands;
pub mod config;
pub mod failure;
pub mod report;

pub use cli::{execute, run, Cli, Command};
pub use config::{RunConfig, SearchMode};
pub use failure::{Failure, Outcome};
