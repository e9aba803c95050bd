//! Batch front end: TOML experiment configs, dispatch onto the toolkit, and
//! artifact directories with a hashed manifest.

// `!(x > 0.0)` is the NaN-rejecting form of a precondition.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use commands::{run, RunOutput};
pub use config::{parse_config, Command, ExperimentConfig, LoadedConfig};
pub use error::CliError;

/// Process exit status for a finished run.
pub fn exit_code(out: &Result<RunOutput, CliError>) -> i32 {
    match out {
        Ok(o) if o.passed() => 0,
        Ok(_) => 1,
        Err(_) => 2,
    }
}
