use std::process::ExitCode;

use clap::Parser;

use bellbench_cli::commands::{self, Cli, Command};
use bellbench_cli::error::CliError;
use bellbench_cli::server;

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Scan(args) => commands::run_scan(&args),
        Command::Bell(args) => commands::run_bell(&args),
        Command::Diagnose(args) => commands::run_diagnose(&args),
        Command::Fit(args) => commands::run_fit(&args),
        Command::Tune(args) => commands::run_tune(&args),
        Command::Calibrate(args) => commands::run_calibrate(&args),
        Command::Bound(args) => commands::run_bound(&args),
        Command::Serve(args) => {
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
            runtime
                .block_on(server::serve(&args.host, args.port))
                .map_err(|e| CliError::Runtime(format!("server: {e}")))?;
            Ok(String::new())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit()
        }
    }
}
