mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use args::Cli;
use commands::Failure;
use tdid_core::Error;

/// 2 usage or configuration, 3 I/O, format or data, 4 backend,
/// 5 no detection.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) => 2,
        Error::BackendFailure(_) => 4,
        Error::NoDetection => 5,
        _ => 3,
    }
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage { command, message }) => {
            let mut cmd = Cli::command();
            let sub = cmd.find_subcommand_mut(command).expect("known subcommand").clone();
            sub.bin_name(format!("tdid {command}"))
                .error(clap::error::ErrorKind::MissingRequiredArgument, message)
                .exit()
        }
        Err(Failure::Config(e)) => {
            eprintln!("error[{}]: configuration: {e}", e.kind());
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(exit_code(&e))
        }
    }
}
