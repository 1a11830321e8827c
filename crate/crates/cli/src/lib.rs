//! Command-line driver for the `gcl` binary.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

use args::{Cli, Command};
use error::CliResult;

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::ExportEmbeddings(a) => commands::export_cmd(a),
        Command::Sweep(a) => commands::sweep_cmd(a),
        Command::Gradcheck(a) => commands::gradcheck_cmd(a),
    }
}
