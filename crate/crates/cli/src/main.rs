mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use tracing_subscriber::EnvFilter;

use args::{Cli, Command};
use commands::CliError;

fn init_logging() {
    let filter = EnvFilter::try_from_env("GAZELOAD_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn parse(argv: &[String]) -> Result<Cli, ExitCode> {
    Cli::try_parse_from(std::iter::once("gazeload".to_string()).chain(argv.iter().cloned())).map_err(|e| {
        let _ = e.print();
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
            _ => ExitCode::from(1),
        }
    })
}

fn dispatch(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Fixations(a) => commands::fixations(a),
        Command::Dataset(a) => commands::dataset(a),
        Command::TrainMlp(a) => commands::train_mlp(a),
        Command::TrainRf(a) => commands::train_rf(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Serve(a) => commands::serve(a),
        Command::Stream(a) => commands::stream(a),
        Command::Pipeline(a) => commands::pipeline(a),
        Command::Rerun(_) => unreachable!("reruns are expanded before dispatch"),
    }
}

fn main() -> ExitCode {
    init_logging();
    let mut argv: Vec<String> = std::env::args().skip(1).collect();
    let mut cli = match parse(&argv) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Command::Rerun(r) = &cli.command {
        argv = match commands::rerun(r) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(e.exit_code());
            }
        };
        cli = match parse(&argv) {
            Ok(Cli {
                command: Command::Rerun(_),
            }) => {
                eprintln!("usage error: a manifest cannot record a rerun");
                return ExitCode::from(1);
            }
            Ok(c) => c,
            Err(code) => return code,
        };
    }
    manifest::set_invocation(argv);
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `gazeload --help` for usage");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
