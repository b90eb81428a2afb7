//! `ump`: run model servers and platforms, talk to them, administer them.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 remote error,
//! 3 local fault.

mod args;
mod remote;
mod serve;
mod worker;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use ump_server::ClientError;

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Remote(ClientError),
    /// The remote answered but the outcome is a failure (e.g. a failed job).
    RemoteState(String),
    Local(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Remote(_) | Failure::RemoteState(_) => 2,
            Failure::Local(_) => 3,
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::Remote(e)
    }
}

fn init_logging(level: tracing::Level) {
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .try_init();
}

fn report(failure: &Failure, json: bool) {
    match failure {
        Failure::Remote(ClientError::Remote(problem)) => {
            if json {
                println!("{}", serde_json::to_string(problem).expect("problem serializes"));
            } else {
                eprintln!("error: {} {} ({}): {}", problem.status, problem.title, problem.kind, problem.detail);
                for v in problem.violations.iter().flatten() {
                    eprintln!("  {v}");
                }
            }
        }
        Failure::Remote(e) => eprintln!("error: {e}"),
        Failure::RemoteState(msg) | Failure::Usage(msg) | Failure::Local(msg) => eprintln!("error: {msg}"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Command::Worker { process } = &cli.command {
        return match worker::run(process) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(3)
            }
        };
    }
    let quiet = matches!(cli.command, Command::Client(_) | Command::Admin(_));
    init_logging(match (cli.verbose, quiet) {
        (true, _) => tracing::Level::DEBUG,
        (false, true) => tracing::Level::WARN,
        (false, false) => tracing::Level::INFO,
    });
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(3);
        }
    };
    let json = cli.json;
    let result = runtime.block_on(async move {
        match cli.command {
            Command::Serve(cmd) => serve::run(cmd).await,
            Command::Demo(cmd) => serve::demo(cmd, json).await,
            Command::Client(cmd) => remote::client(cmd, json).await,
            Command::Admin(cmd) => remote::admin(cmd, json).await,
            Command::Worker { .. } => unreachable!("handled above"),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            report(&failure, json);
            ExitCode::from(failure.code())
        }
    }
}
