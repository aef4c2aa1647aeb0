mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};
use config::ConfigError;

fn main() -> ExitCode {
    let cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let argv = match config::expand(&cmd, std::env::args_os().collect()) {
        Ok(a) => a,
        Err(ConfigError::Usage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
        Err(ConfigError::Io(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match cmd.try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match &cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::TrainDetector(a) => commands::train_detector_cmd(a),
        Command::TrainRecognizer(a) => commands::train_recognizer_cmd(a),
        Command::RecognizePage(a) => commands::recognize_page_cmd(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
