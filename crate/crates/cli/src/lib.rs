//! Library surface of the runner so integration tests can drive the
//! commands in-process; the binary in `main.rs` is a thin argument parser
//! over these.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_oracle, cmd_paths, cmd_quantize, cmd_verify, exit_code_for, Manifest,
};
pub use config::RunConfig;
