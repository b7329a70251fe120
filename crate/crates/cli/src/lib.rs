//! Harness behind the `mdlc` binary: configuration, the seed-by-method
//! training matrix, summaries, and the verification subcommands.

pub mod config;
pub mod matrix;
pub mod summary;
pub mod verify;

pub use config::RunConfig;
pub use matrix::{run_matrix, run_matrix_with, verify_manifest, Manifest};
pub use summary::{summarize, summarize_phase, SummaryTable};
