use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lqnash::commands::{self, GenerateArgs, RatesArgs, SolveArgs, VerifyArgs};

/// Stabilizing Nash equilibria of zero-sum linear-quadratic dynamic games.
#[derive(Parser)]
#[command(author, version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance and write solution.json and trace.csv.
    Solve(SolveArgs),
    /// Certify a policy pair and print the certificate as JSON.
    Verify(VerifyArgs),
    /// Emit a seeded random instance or a preset.
    Generate(GenerateArgs),
    /// Run several methods and write per-round errors and fitted rates.
    Rates(RatesArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LQNASH_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_PARSE } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Verify(a) => commands::verify(a),
        Command::Generate(a) => commands::generate(a),
        Command::Rates(a) => commands::rates(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
