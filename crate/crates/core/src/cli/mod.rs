//! Configuration, presets, output files and subcommands of the `meshwalk` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod presets;
pub mod verify;

pub use commands::{run_command, Command, Outcome};
pub use config::RunConfig;
