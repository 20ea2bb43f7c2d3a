//! The `hyperem` command-line pipeline: dataset generation, training,
//! emulation, evaluation, inversion, benchmarking and figure export.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod svg;

use std::path::Path;

pub use commands::Context;
pub use error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Emulate,
    Eval,
    Invert,
    Bench,
    Plot,
}

/// Loads the configuration, applies `--set` overrides and runs `cmd`.
pub fn run(cmd: Command, config_path: Option<&Path>, sets: &[String], ctx: &Context) -> CliResult<()> {
    let v = config::load(config_path, sets)?;
    match cmd {
        Command::GenData => commands::gen_data(v, ctx),
        Command::Train => commands::train(v, ctx),
        Command::Emulate => commands::emulate(v, ctx),
        Command::Eval => commands::eval(v, ctx),
        Command::Invert => commands::invert(v, ctx),
        Command::Bench => commands::bench(v, ctx),
        Command::Plot => commands::plot(v, ctx),
    }
}
