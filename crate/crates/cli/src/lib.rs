//! Command-line front end for the `geoloc` engine.
pub mod args;
pub mod commands;

use args::{Cli, Command};
pub use commands::CliError;

/// Runs one subcommand and returns the process exit code.
pub fn run(cli: &Cli) -> u8 {
    let result = match &cli.command {
        Command::McCoverage(a) => commands::mc_coverage(a),
        Command::Localize(a) => commands::localize(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Generate(a) => commands::generate(a),
        Command::SelectKeyframes(a) => commands::select(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
